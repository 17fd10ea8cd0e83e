//! Regular patch grids with weak (image-level) labels.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Start offsets of `grid` windows of length `patch` spread over `len`:
/// `round(i·(len − patch)/(grid − 1))`, or one centred window when `grid == 1`.
pub fn patch_offsets(len: usize, grid: usize, patch: usize) -> Result<Vec<usize>> {
    if grid == 0 {
        return Err(Error::param("patch_grid", "grid must be at least 1"));
    }
    if patch == 0 || patch > len {
        return Err(Error::param(
            "patch_grid",
            format!("patch size {patch} does not fit length {len}"),
        ));
    }
    let span = len - patch;
    if grid == 1 {
        return Ok(vec![span / 2]);
    }
    let g = grid - 1;
    // round half up in integer arithmetic
    Ok((0..grid).map(|i| (2 * i * span + g) / (2 * g)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub tensor: Tensor,
    pub label: usize,
    pub source: usize,
    /// `(grid row, grid column)`.
    pub position: (usize, usize),
}

/// Copies the `size × size` window at `(top, left)` out of a C×H×W image.
pub fn crop(image: &Tensor, top: usize, left: usize, size: usize) -> Result<Tensor> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::dim("crop", "ndim", 3, image.ndim()));
    };
    if top + size > h || left + size > w || size == 0 {
        return Err(Error::param(
            "crop",
            format!("{size}×{size} window at ({top},{left}) exceeds {h}×{w}"),
        ));
    }
    let d = image.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for r in top..top + size {
            let start = ch * h * w + r * w + left;
            out.extend_from_slice(&d[start..start + size]);
        }
    }
    Tensor::new(vec![c, size, size], out)
}

/// Row-major window origins `(top, left, grid row, grid column)` for an
/// `h × w` image.
pub fn grid_windows(h: usize, w: usize, grid: usize, patch: usize) -> Result<Vec<(usize, usize, usize, usize)>> {
    let rows = patch_offsets(h, grid, patch)?;
    let cols = patch_offsets(w, grid, patch)?;
    Ok(rows
        .iter()
        .enumerate()
        .flat_map(|(i, &top)| cols.iter().enumerate().map(move |(j, &left)| (top, left, i, j)))
        .collect())
}

/// Cuts a `grid × grid` set of `patch`-pixel crops, each carrying the
/// image's label.
pub fn sample_patch_grid(image: &Tensor, grid: usize, patch: usize, weak_label: usize, source: usize) -> Result<Vec<Patch>> {
    let [_, h, w] = *image.shape() else {
        return Err(Error::dim("sample_patch_grid", "ndim", 3, image.ndim()));
    };
    if patch > h.min(w) {
        return Err(Error::param(
            "sample_patch_grid",
            format!("patch size {patch} exceeds image {h}×{w}"),
        ));
    }
    grid_windows(h, w, grid, patch)?
        .into_iter()
        .map(|(top, left, i, j)| {
            Ok(Patch {
                tensor: crop(image, top, left, patch)?,
                label: weak_label,
                source,
                position: (i, j),
            })
        })
        .collect()
}
