//! Forward and backward kernels. Pure functions over [`Tensor`]s; the graph in
//! `graph.rs` records which of these ran and replays the backward halves.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `c = op(a) * op(b) + beta * c` with row-major storage. `a` is `m×k` after
/// the optional transpose, `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    beta: T,
    c: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the buffers whose lengths are
    // checked against m, k, n.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output length of a sliding window along one axis.
pub fn window_output_len(len: usize, window: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || window == 0 || window > padded {
        return None;
    }
    Some((padded - window) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn expect_rank<T: Element>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.ndim() != rank {
        return Err(Error::dim(op, "ndim", rank, t.ndim()));
    }
    Ok(())
}

pub fn conv_geometry<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeometry> {
    expect_rank("conv2d", input, 4)?;
    expect_rank("conv2d", weight, 4)?;
    if stride == 0 {
        return Err(Error::param("conv2d", "stride must be positive"));
    }
    let (c, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    let (k, wc, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    if wc != c {
        return Err(Error::dim("conv2d", "channels", c, wc));
    }
    if bias.numel() != k || bias.ndim() != 1 {
        return Err(Error::dim("conv2d", "bias", k, bias.numel()));
    }
    let out_h =
        window_output_len(h, kh, stride, pad).ok_or_else(|| Error::dim("conv2d", "height", h + 2 * pad, kh))?;
    let out_w =
        window_output_len(w, kw, stride, pad).ok_or_else(|| Error::dim("conv2d", "width", w + 2 * pad, kw))?;
    Ok(ConvGeometry {
        channels: c,
        height: h,
        width: w,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        pad,
        out_h,
        out_w,
    })
}

fn im2col<T: Element>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kernel_h {
            for j in 0..g.kernel_w {
                let row = (c * g.kernel_h + i) * g.kernel_w + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if y < 0 || y >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if x < 0 || x >= g.width as isize {
                            T::zero()
                        } else {
                            src[x as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kernel_h {
            for j in 0..g.kernel_w {
                let row = (c * g.kernel_h + i) * g.kernel_w + j;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < g.width as isize {
                            plane[y as usize * g.width + x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `N×C×H×W` input with `K×C×kh×kw` filters.
pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, bias, stride, pad)?;
    let n = input.shape()[0];
    let k = weight.shape()[0];
    let in_len = g.channels * g.height * g.width;
    let out_len = k * g.positions();
    let mut out = vec![T::zero(); n * out_len];
    out.par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each(|(dst, src)| {
            let mut cols = vec![T::zero(); g.col_rows() * g.positions()];
            im2col(&g, src, &mut cols);
            for (kk, b) in bias.data().iter().enumerate() {
                dst[kk * g.positions()..(kk + 1) * g.positions()]
                    .iter_mut()
                    .for_each(|v| *v = *b);
            }
            gemm(k, g.col_rows(), g.positions(), weight.data(), false, &cols, false, T::one(), dst);
        });
    Tensor::new(vec![n, k, g.out_h, g.out_w], out)
}

pub struct ConvGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &[T],
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(input, weight, bias, stride, pad)?;
    let n = input.shape()[0];
    let k = weight.shape()[0];
    let in_len = g.channels * g.height * g.width;
    let out_len = k * g.positions();
    let rows = g.col_rows();
    let p = g.positions();

    let per_sample: Vec<(Vec<T>, Vec<T>)> = input
        .data()
        .par_chunks(in_len)
        .zip(grad_out.par_chunks(out_len))
        .map(|(src, dout)| {
            let mut cols = vec![T::zero(); rows * p];
            im2col(&g, src, &mut cols);
            let mut dw = vec![T::zero(); k * rows];
            gemm(k, p, rows, dout, false, &cols, true, T::zero(), &mut dw);
            let mut dcols = vec![T::zero(); rows * p];
            gemm(rows, k, p, weight.data(), true, dout, false, T::zero(), &mut dcols);
            let mut dx = vec![T::zero(); in_len];
            col2im(&g, &dcols, &mut dx);
            (dw, dx)
        })
        .collect();

    // Reduce in sample order so results do not depend on thread scheduling.
    let mut dweight = vec![T::zero(); k * rows];
    let mut dinput = Vec::with_capacity(n * in_len);
    for (dw, dx) in per_sample {
        dweight.iter_mut().zip(&dw).for_each(|(a, &b)| *a += b);
        dinput.extend_from_slice(&dx);
    }
    let mut dbias = vec![T::zero(); k];
    for dout in grad_out.chunks(out_len) {
        for (kk, db) in dbias.iter_mut().enumerate() {
            *db += dout[kk * p..(kk + 1) * p].iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads {
        input: dinput,
        weight: dweight,
        bias: dbias,
    })
}

/// One pooling grid along both axes of a plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGrid {
    pub win_h: usize,
    pub win_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Max over each window of every `H×W` plane, writing values and the flat
/// input index of the first (row-major) maximum.
fn pool_planes<T: Element>(input: &Tensor<T>, grid: &PoolGrid, values: &mut Vec<T>, argmax: &mut Vec<u32>) {
    let (h, w) = (input.shape()[2], input.shape()[3]);
    let planes = input.shape()[0] * input.shape()[1];
    for plane in 0..planes {
        let base = plane * h * w;
        let src = &input.data()[base..base + h * w];
        for oy in 0..grid.out_h {
            for ox in 0..grid.out_w {
                let y0 = oy * grid.stride_h;
                let x0 = ox * grid.stride_w;
                let mut best = T::neg_infinity();
                let mut best_idx = y0 * w + x0;
                for y in y0..y0 + grid.win_h {
                    for x in x0..x0 + grid.win_w {
                        let v = src[y * w + x];
                        if v > best {
                            best = v;
                            best_idx = y * w + x;
                        }
                    }
                }
                values.push(best);
                argmax.push((base + best_idx) as u32);
            }
        }
    }
}

pub fn maxpool2d_forward<T: Element>(input: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    expect_rank("maxpool2d", input, 4)?;
    if window == 0 || stride == 0 {
        return Err(Error::param("maxpool2d", "window and stride must be positive"));
    }
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    if window > h {
        return Err(Error::dim("maxpool2d", "height", window, h));
    }
    if window > w {
        return Err(Error::dim("maxpool2d", "width", window, w));
    }
    let grid = PoolGrid {
        win_h: window,
        win_w: window,
        stride_h: stride,
        stride_w: stride,
        out_h: (h - window) / stride + 1,
        out_w: (w - window) / stride + 1,
    };
    let mut values = Vec::with_capacity(n * c * grid.out_h * grid.out_w);
    let mut argmax = Vec::with_capacity(values.capacity());
    pool_planes(input, &grid, &mut values, &mut argmax);
    Ok((Tensor::new(vec![n, c, grid.out_h, grid.out_w], values)?, argmax))
}

/// Routes each upstream gradient to the input position that won its window.
pub fn scatter_argmax<T: Element>(input_len: usize, argmax: &[u32], grad_out: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        dx[idx as usize] += g;
    }
    dx
}

/// Window and stride of one pyramid level over an axis of length `len`:
/// `ceil(len / bins)` and `floor(len / bins)`.
pub fn spp_level_geometry(len: usize, bins: usize) -> Result<(usize, usize)> {
    if bins == 0 {
        return Err(Error::param("spp", "pyramid level must be positive"));
    }
    if bins > len {
        return Err(Error::param(
            "spp",
            format!("level {bins} exceeds input extent {len}"),
        ));
    }
    Ok((len.div_ceil(bins), len / bins))
}

/// Spatial pyramid max pooling to a fixed-length `N×(C·Σn²)` vector.
pub fn spp_forward<T: Element>(input: &Tensor<T>, levels: &[usize]) -> Result<(Tensor<T>, Vec<u32>)> {
    expect_rank("spp", input, 4)?;
    if levels.is_empty() {
        return Err(Error::param("spp", "at least one pyramid level is required"));
    }
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let mut grids = Vec::with_capacity(levels.len());
    for &bins in levels {
        let (win_h, stride_h) = spp_level_geometry(h, bins)?;
        let (win_w, stride_w) = spp_level_geometry(w, bins)?;
        grids.push(PoolGrid {
            win_h,
            win_w,
            stride_h,
            stride_w,
            out_h: bins,
            out_w: bins,
        });
    }
    let per_sample: usize = c * levels.iter().map(|b| b * b).sum::<usize>();
    let mut values = Vec::with_capacity(n * per_sample);
    let mut argmax = Vec::with_capacity(n * per_sample);
    for s in 0..n {
        let sample = input.slice_outer(s).reshape(&[1, c, h, w])?;
        let base = (s * c * h * w) as u32;
        for grid in &grids {
            let mut idx = Vec::new();
            pool_planes(&sample, grid, &mut values, &mut idx);
            argmax.extend(idx.into_iter().map(|i| i + base));
        }
    }
    Ok((Tensor::new(vec![n, per_sample], values)?, argmax))
}

pub fn spp_output_len(channels: usize, levels: &[usize]) -> usize {
    channels * levels.iter().map(|b| b * b).sum::<usize>()
}

fn flat_dims<T: Element>(op: &'static str, input: &Tensor<T>) -> Result<(usize, usize)> {
    if input.ndim() < 2 {
        return Err(Error::dim(op, "ndim", 2, input.ndim()));
    }
    Ok((input.shape()[0], input.shape()[1..].iter().product()))
}

/// `y = x·Wᵀ + b` for `x` of shape `N×D` (trailing axes are flattened).
pub fn linear_forward<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = flat_dims("linear", input)?;
    expect_rank("linear", weight, 2)?;
    let (m, wd) = (weight.shape()[0], weight.shape()[1]);
    if wd != d {
        return Err(Error::dim("linear", "features", wd, d));
    }
    if bias.numel() != m {
        return Err(Error::dim("linear", "bias", m, bias.numel()));
    }
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, d, m, input.data(), false, weight.data(), true, T::one(), &mut out);
    Tensor::new(vec![n, m], out)
}

pub struct LinearGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &[T]) -> Result<LinearGrads<T>> {
    let (n, d) = flat_dims("linear", input)?;
    let m = weight.shape()[0];
    let mut dx = vec![T::zero(); n * d];
    gemm(n, m, d, grad_out, false, weight.data(), false, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); m * d];
    gemm(m, n, d, grad_out, true, input.data(), false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); m];
    for row in grad_out.chunks(m) {
        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    Ok(LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

/// Mean softmax cross-entropy over the batch, accumulated in `f64`.
/// Returns the loss and the row-wise softmax probabilities.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Vec<T>)> {
    expect_rank("softmax_cross_entropy", logits, 2)?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::dim("softmax_cross_entropy", "labels", n, labels.len()));
    }
    if let Some((row, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Data(format!(
            "label {bad} at row {row} is outside [0, {k})"
        )));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
        let sum: f64 = row.iter().map(|&z| (z.as_f64() - max).exp()).sum();
        let log_sum = sum.ln();
        total += -(row[label].as_f64() - max - log_sum);
        probs.extend(row.iter().map(|&z| T::from_f64((z.as_f64() - max).exp() / sum)));
    }
    Ok((total / n as f64, probs))
}
