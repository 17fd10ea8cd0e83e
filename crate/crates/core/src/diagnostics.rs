//! Filter utilisation profiles and first-layer filter visualisation.

use std::path::Path;

use crate::data::SampleSource;
use crate::error::{Error, Result};
use crate::models::{LayerKind, ModelGraph};
use crate::tensor::Tensor;
use crate::training::BatchSource;

/// Per-filter statistics of a conv layer after its ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationProfile {
    pub layer: String,
    /// Fraction of strictly positive responses over all positions and samples.
    pub ratios: Vec<f64>,
    /// Mean post-ReLU response.
    pub means: Vec<f64>,
    pub samples: usize,
}

/// Counts, per output channel, how often the conv layer `layer` responds
/// with a strictly positive value.
pub fn activation_ratio(
    model: &ModelGraph,
    layer: &str,
    src: &dyn SampleSource,
    batch_size: usize,
) -> Result<ActivationProfile> {
    let idx = model.layer_index(layer)?;
    let LayerKind::Conv { out_channels, .. } = model.layers()[idx].kind else {
        return Err(Error::Config(format!("`{layer}` is not a convolution layer")));
    };
    let n = src.len();
    if n == 0 {
        return Err(Error::Data("activation profile needs at least one sample".into()));
    }
    let mut positive = vec![0u64; out_channels];
    let mut sums = vec![0.0f64; out_channels];
    let mut total = 0u64;
    for start in (0..n).step_by(batch_size.max(1)) {
        let indices: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let batch = src.batch(&indices, &vec![false; indices.len()])?;
        let act = model.activations(&batch, Some(layer))?;
        let [b, c, h, w] = *act.shape() else {
            return Err(Error::State("conv output is not 4-D".into()));
        };
        let plane = h * w;
        for s in 0..b {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for &v in &act.data()[off..off + plane] {
                    if v > 0.0 {
                        positive[ch] += 1;
                        sums[ch] += v as f64;
                    }
                }
            }
        }
        total += (b * plane) as u64;
    }
    Ok(ActivationProfile {
        layer: layer.to_string(),
        ratios: positive.iter().map(|&p| p as f64 / total as f64).collect(),
        means: sums.iter().map(|&s| s / total as f64).collect(),
        samples: n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SortKey {
    Ratio,
    Mean,
}

/// Filter indices in descending order of `key`; ties keep index order.
pub fn sort_profile(profile: &ActivationProfile, key: SortKey) -> Vec<usize> {
    let values = match key {
        SortKey::Ratio => &profile.ratios,
        SortKey::Mean => &profile.means,
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// Tiles every kernel of a 1- or 3-channel conv layer into a near-square
/// grid with one-pixel black separators. Each kernel is min-max scaled to
/// [0, 255] on its own; a constant kernel becomes mid-grey.
pub fn export_filter_grid(model: &ModelGraph, layer: &str) -> Result<Tensor> {
    let idx = model.layer_index(layer)?;
    let spec = &model.layers()[idx];
    if !spec.is_conv() {
        return Err(Error::Export(format!("`{layer}` is not a convolution layer")));
    }
    let w = model
        .param(&spec.weight_key())
        .ok_or_else(|| Error::State(format!("`{layer}` has no weights")))?;
    let [count, channels, k, _] = *w.shape() else {
        return Err(Error::State("conv weight is not 4-D".into()));
    };
    if channels != 1 && channels != 3 {
        return Err(Error::Export(format!(
            "`{layer}` kernels have {channels} input channels; only 1 or 3 can be shown as images, export channels separately"
        )));
    }
    let cols = (count as f64).sqrt().ceil() as usize;
    let rows = count.div_ceil(cols);
    let (height, width) = (rows * (k + 1) + 1, cols * (k + 1) + 1);
    let mut img = vec![0.0f32; 3 * height * width];
    let kernel_len = channels * k * k;
    for f in 0..count {
        let kernel = &w.data()[f * kernel_len..(f + 1) * kernel_len];
        let lo = kernel.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = kernel.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let scale = |v: f32| {
            if hi > lo {
                (v - lo) / (hi - lo) * 255.0
            } else {
                127.5
            }
        };
        let (top, left) = ((f / cols) * (k + 1) + 1, (f % cols) * (k + 1) + 1);
        for c in 0..3 {
            let src_c = if channels == 1 { 0 } else { c };
            for y in 0..k {
                for x in 0..k {
                    img[c * height * width + (top + y) * width + left + x] = scale(kernel[(src_c * k + y) * k + x]);
                }
            }
        }
    }
    Tensor::new(vec![3, height, width], img)
}

/// Decimal rendering with six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // a carry can add a digit (9.999996 → 10.00000); re-render in that case
    let parsed: f64 = s.parse().expect("formatted float");
    if parsed != 0.0 && parsed.abs().log10().floor() as i32 > magnitude && decimals > 0 {
        return format!("{v:.prec$}", prec = decimals - 1);
    }
    s
}

/// `profile,rank,filter_id,ratio,mean` with filters ranked by ratio.
pub fn profile_report_csv(profiles: &[ActivationProfile]) -> Result<String> {
    if profiles.is_empty() {
        return Err(Error::Data("no profiles to report".into()));
    }
    let mut out = String::from("profile,rank,filter_id,ratio,mean\n");
    for p in profiles {
        for (rank, f) in sort_profile(p, SortKey::Ratio).into_iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.layer,
                rank,
                f,
                sig6(p.ratios[f]),
                sig6(p.means[f])
            ));
        }
    }
    Ok(out)
}

pub fn profile_report(profiles: &[ActivationProfile], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, profile_report_csv(profiles)?).map_err(|e| Error::io(path, e))
}
