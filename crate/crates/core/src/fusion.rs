//! RGB-D network: two truncated single-modality branches whose flattened
//! features are concatenated and projected by the first layer of a small
//! fusion head, trained end to end.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autograd::Graph;
use crate::data::{decode_checkpoint, encode_checkpoint, ImageSet};
use crate::error::{Error, Result};
use crate::models::{
    argmax_rows, build_preset, model_from_parts, ArchPreset, ModelGraph, PresetConfig, StepOutput,
};
use crate::tensor::Tensor;
use crate::training::{fit, BatchSource, FreezePlan, Learner, TrainConfig, TrainLog};

/// The joint projection `W̄ = [W_rgb W_depth]`, `D_rgbd × (D_r + D_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionProjection {
    pub w: Tensor,
    pub d_r: usize,
    pub d_d: usize,
}

impl FusionProjection {
    pub fn new(w: Tensor, d_r: usize, d_d: usize) -> Result<Self> {
        if d_r == 0 {
            return Err(Error::dim("fusion_projection", "rgb width", 1, 0));
        }
        if d_d == 0 {
            return Err(Error::dim("fusion_projection", "depth width", 1, 0));
        }
        match *w.shape() {
            [_, cols] if cols == d_r + d_d => Ok(FusionProjection { w, d_r, d_d }),
            [_, cols] => Err(Error::dim("fusion_projection", "columns", d_r + d_d, cols)),
            _ => Err(Error::dim("fusion_projection", "ndim", 2, w.ndim())),
        }
    }

    /// Assembles `W̄` from its two blocks.
    pub fn from_blocks(w_rgb: &Tensor, w_depth: &Tensor) -> Result<Self> {
        let (&[rows, d_r], &[rows_d, d_d]) = (w_rgb.shape(), w_depth.shape()) else {
            return Err(Error::dim("fusion_projection", "ndim", 2, w_rgb.ndim().max(w_depth.ndim())));
        };
        if rows != rows_d {
            return Err(Error::dim("fusion_projection", "rows", rows, rows_d));
        }
        let mut data = Vec::with_capacity(rows * (d_r + d_d));
        for r in 0..rows {
            data.extend_from_slice(&w_rgb.data()[r * d_r..(r + 1) * d_r]);
            data.extend_from_slice(&w_depth.data()[r * d_d..(r + 1) * d_d]);
        }
        FusionProjection::new(Tensor::new(vec![rows, d_r + d_d], data)?, d_r, d_d)
    }

    pub fn d_rgbd(&self) -> usize {
        self.w.shape()[0]
    }

    fn block(&self, start: usize, width: usize) -> Tensor {
        let cols = self.d_r + self.d_d;
        let rows = self.d_rgbd();
        Tensor::from_fn(&[rows, width], |i| self.w.data()[(i / width) * cols + start + i % width])
    }

    pub fn w_rgb(&self) -> Tensor {
        self.block(0, self.d_r)
    }

    pub fn w_depth(&self) -> Tensor {
        self.block(self.d_r, self.d_d)
    }
}

fn check_features(f: &Tensor, width: usize, what: &str) -> Result<usize> {
    match *f.shape() {
        [n, w] if w == width => Ok(n),
        [_, w] => Err(Error::dim("fuse_features", what.to_string(), width, w)),
        _ => Err(Error::dim("fuse_features", "ndim", 2, f.ndim())),
    }
}

fn matmul_rows(x: &[f32], w: &Tensor, out: &mut [f64]) {
    let cols = w.shape()[1];
    for (r, o) in out.iter_mut().enumerate() {
        *o += w.data()[r * cols..(r + 1) * cols]
            .iter()
            .zip(x)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum::<f64>();
    }
}

/// `F_rgbd = W̄·[F_rgb; F_depth]` for each row of the N×D_r and N×D_d inputs.
pub fn fuse_features(f_rgb: &Tensor, f_depth: &Tensor, proj: &FusionProjection) -> Result<Tensor> {
    let n = check_features(f_rgb, proj.d_r, "rgb width")?;
    let n_d = check_features(f_depth, proj.d_d, "depth width")?;
    if n != n_d {
        return Err(Error::dim("fuse_features", "batch", n, n_d));
    }
    let rows = proj.d_rgbd();
    let mut out = Vec::with_capacity(n * rows);
    for i in 0..n {
        let mut x = f_rgb.data()[i * proj.d_r..(i + 1) * proj.d_r].to_vec();
        x.extend_from_slice(&f_depth.data()[i * proj.d_d..(i + 1) * proj.d_d]);
        let mut acc = vec![0.0f64; rows];
        matmul_rows(&x, &proj.w, &mut acc);
        out.extend(acc.into_iter().map(|v| v as f32));
    }
    Tensor::new(vec![n, rows], out)
}

/// Same product written as `W_rgb·F_rgb + W_depth·F_depth`.
pub fn fuse_features_blockwise(f_rgb: &Tensor, f_depth: &Tensor, proj: &FusionProjection) -> Result<Tensor> {
    let n = check_features(f_rgb, proj.d_r, "rgb width")?;
    let n_d = check_features(f_depth, proj.d_d, "depth width")?;
    if n != n_d {
        return Err(Error::dim("fuse_features", "batch", n, n_d));
    }
    let (w_rgb, w_depth) = (proj.w_rgb(), proj.w_depth());
    let rows = proj.d_rgbd();
    let mut out = Vec::with_capacity(n * rows);
    for i in 0..n {
        let mut acc = vec![0.0f64; rows];
        matmul_rows(&f_rgb.data()[i * proj.d_r..(i + 1) * proj.d_r], &w_rgb, &mut acc);
        matmul_rows(&f_depth.data()[i * proj.d_d..(i + 1) * proj.d_d], &w_depth, &mut acc);
        out.extend(acc.into_iter().map(|v| v as f32));
    }
    Tensor::new(vec![n, rows], out)
}

/// Two branches cut at their feature layers plus a fusion head
/// `fuse1 → relu → fc8 → loss`, where `fuse1` is the joint projection.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdModel {
    pub rgb: ModelGraph,
    pub depth: ModelGraph,
    pub head: ModelGraph,
    pub cut_rgb: String,
    pub cut_depth: String,
}

const BRANCHES: [&str; 3] = ["rgb", "depth", "head"];

fn feature_width(model: &ModelGraph, cut: &str) -> Result<usize> {
    Ok(model.shape_after(cut)?.iter().product())
}

pub fn build_rgbd_model(
    rgb: &ModelGraph,
    depth: &ModelGraph,
    cut_rgb: &str,
    cut_depth: &str,
    hidden: usize,
    categories: usize,
    seed: u64,
) -> Result<RgbdModel> {
    let rgb_branch = rgb.truncated(cut_rgb)?;
    let depth_branch = depth.truncated(cut_depth)?;
    let d_r = feature_width(rgb, cut_rgb)?;
    let d_d = feature_width(depth, cut_depth)?;
    // validates the projection's column split
    FusionProjection::new(Tensor::zeros(&[1, d_r + d_d]), d_r, d_d)?;
    let cfg = PresetConfig {
        categories,
        in_channels: 0,
        input_size: d_r + d_d,
        conv_widths: vec![],
        fc_width: hidden,
        spp_levels: vec![],
        init: rgb.init().scheme,
    };
    let head = build_preset(ArchPreset::FusionHead, &cfg, seed)?;
    Ok(RgbdModel {
        rgb: rgb_branch,
        depth: depth_branch,
        head,
        cut_rgb: cut_rgb.to_string(),
        cut_depth: cut_depth.to_string(),
    })
}

impl RgbdModel {
    fn parts(&self) -> [&ModelGraph; 3] {
        [&self.rgb, &self.depth, &self.head]
    }

    pub fn projection(&self) -> Result<FusionProjection> {
        let w = self
            .head
            .param("fuse1.weight")
            .ok_or_else(|| Error::State("fusion head has no fuse1 layer".into()))?;
        FusionProjection::new(
            w.clone(),
            feature_width(&self.rgb, &self.cut_rgb)?,
            feature_width(&self.depth, &self.cut_depth)?,
        )
    }

    /// All parameters keyed `branch/layer.weight` etc.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        BRANCHES
            .iter()
            .zip(self.parts())
            .flat_map(|(b, m)| m.params().iter().map(move |(k, v)| (format!("{b}/{k}"), v.clone())))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.parts().iter().map(|m| m.param_count()).sum()
    }

    /// Plan training every layer of every part, with `branch/layer` names.
    pub fn train_all_plan(&self) -> FreezePlan {
        let names: Vec<String> = BRANCHES
            .iter()
            .zip(self.parts())
            .flat_map(|(b, m)| m.layers().iter().map(move |l| format!("{b}/{}", l.name)))
            .collect();
        FreezePlan::from_layers(&names)
    }

    fn run(&self, batch: &(Tensor, Tensor), labels: Option<&[usize]>) -> Result<StepOutput> {
        let mut g = Graph::<f32>::new();
        let vars: Vec<_> = self
            .parts()
            .iter()
            .map(|m| m.register_params(&mut g))
            .collect::<Result<_>>()?;
        let x_rgb = g.leaf(batch.0.clone())?;
        let x_depth = g.leaf(batch.1.clone())?;
        let f_rgb = self.rgb.forward(&mut g, x_rgb, &vars[0], None)?;
        let f_rgb = g.flatten(f_rgb)?;
        let f_depth = self.depth.forward(&mut g, x_depth, &vars[1], None)?;
        let f_depth = g.flatten(f_depth)?;
        let joint = g.concat(&[f_rgb, f_depth])?;
        let logits = self.head.forward(&mut g, joint, &vars[2], None)?;
        let logits_value = g.value(logits).clone();
        let Some(labels) = labels else {
            return Ok(StepOutput {
                loss: f64::NAN,
                logits: logits_value,
                grads: BTreeMap::new(),
            });
        };
        let loss = g.softmax_cross_entropy(logits, labels)?;
        let loss_value = g.scalar_f64(loss);
        let mut grads = g.backward(loss)?;
        let mut out = BTreeMap::new();
        for ((b, m), v) in BRANCHES.iter().zip(self.parts()).zip(vars) {
            for (k, var) in v {
                let gv = grads.take(var).unwrap_or_else(|| vec![0.0; m.params()[&k].numel()]);
                out.insert(format!("{b}/{k}"), gv);
            }
        }
        Ok(StepOutput {
            loss: loss_value,
            logits: logits_value,
            grads: out,
        })
    }

    pub fn predict(&self, rgb: &Tensor, depth: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(&(rgb.clone(), depth.clone()))?))
    }

    /// One checkpoint with `branch/`-prefixed keys; the `.arch` sibling holds
    /// the three descriptors and the cut points.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, encode_checkpoint(&self.params())?).map_err(|e| Error::io(path, e))?;
        let mut arch = format!("rgbd cut_rgb={} cut_depth={}\n", self.cut_rgb, self.cut_depth);
        for (b, m) in BRANCHES.iter().zip(self.parts()) {
            arch.push_str(&format!("[{b}]\n{}", m.describe()));
        }
        let arch_file = crate::models::arch_path(path);
        std::fs::write(&arch_file, arch).map_err(|e| Error::io(&arch_file, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let params = decode_checkpoint(&bytes)?;
        let arch_file = crate::models::arch_path(path);
        let arch = std::fs::read_to_string(&arch_file).map_err(|e| Error::io(&arch_file, e))?;
        let mut sections = arch.split("\n[");
        let header = sections.next().unwrap_or_default();
        let field = |key: &str| {
            header
                .split_whitespace()
                .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| Error::Data(format!("rgbd descriptor lacks `{key}=`")))
        };
        let (cut_rgb, cut_depth) = (field("cut_rgb")?, field("cut_depth")?);
        let mut parts = Vec::new();
        for b in BRANCHES {
            let body = sections
                .next()
                .and_then(|s| s.strip_prefix(&format!("{b}]\n")))
                .ok_or_else(|| Error::Data(format!("rgbd descriptor lacks a [{b}] section")))?;
            let prefix = format!("{b}/");
            let own = params
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|k| (k.to_string(), v.clone())))
                .collect();
            parts.push(model_from_parts(body, own)?);
        }
        let head = parts.pop().expect("three parts");
        let depth = parts.pop().expect("three parts");
        let rgb = parts.pop().expect("three parts");
        Ok(RgbdModel {
            rgb,
            depth,
            head,
            cut_rgb,
            cut_depth,
        })
    }
}

impl Learner for RgbdModel {
    type Batch = (Tensor, Tensor);

    fn loss_and_grads(&self, batch: &Self::Batch, labels: &[usize]) -> Result<StepOutput> {
        self.run(batch, Some(labels))
    }

    fn logits(&self, batch: &Self::Batch) -> Result<Tensor> {
        Ok(self.run(batch, None)?.logits)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor) -> Result<()>) -> Result<()> {
        let parts = [&mut self.rgb, &mut self.depth, &mut self.head];
        for (b, m) in BRANCHES.iter().zip(parts) {
            for (k, t) in m.params_mut().iter_mut() {
                f(&format!("{b}/{k}"), t)?;
            }
        }
        Ok(())
    }
}

/// Aligned RGB and depth sets.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSet {
    pub rgb: ImageSet,
    pub depth: ImageSet,
}

impl PairedSet {
    pub fn new(rgb: ImageSet, depth: ImageSet) -> Result<Self> {
        if rgb.labels != depth.labels || rgb.num_classes != depth.num_classes {
            return Err(Error::Data("RGB and depth sets are not paired sample for sample".into()));
        }
        Ok(PairedSet { rgb, depth })
    }
}

impl BatchSource for PairedSet {
    type Batch = (Tensor, Tensor);

    fn len(&self) -> usize {
        self.rgb.images.len()
    }

    fn num_classes(&self) -> usize {
        self.rgb.num_classes
    }

    fn label(&self, index: usize) -> usize {
        self.rgb.labels[index]
    }

    fn batch(&self, indices: &[usize], flips: &[bool]) -> Result<Self::Batch> {
        // both modalities flip together so they stay aligned
        Ok((self.rgb.batch(indices, flips)?, self.depth.batch(indices, flips)?))
    }
}

/// Joint training of both branches and the head. `plan` defaults to
/// training everything.
pub fn train_rgbd(
    model: RgbdModel,
    train_set: &PairedSet,
    test_set: Option<&PairedSet>,
    cfg: &TrainConfig,
    plan: Option<&FreezePlan>,
) -> Result<(RgbdModel, TrainLog)> {
    let default_plan;
    let plan = match plan {
        Some(p) => p,
        None => {
            default_plan = model.train_all_plan();
            &default_plan
        }
    };
    fit(model, train_set, test_set, cfg, plan)
}
