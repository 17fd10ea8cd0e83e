use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::freeze::FreezePlan;
use super::sgd::Sgd;
use crate::config::KeyValues;
use crate::data::{epoch_order, flip_horizontal, ImageSet, PatchView, SampleSource};
use crate::error::{Error, Result};
use crate::eval::mean_class_accuracy;
use crate::models::{argmax_rows, ModelGraph, StepOutput};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Multiplier applied once the decay point is reached; 1 disables decay.
    pub lr_decay: f32,
    /// Fraction of the epochs after which the decay applies.
    pub lr_decay_at: f64,
    /// Random horizontal flips of training samples.
    pub flip: bool,
}

impl TrainConfig {
    pub const KEYS: [&'static str; 9] = [
        "lr",
        "momentum",
        "weight_decay",
        "batch_size",
        "epochs",
        "seed",
        "lr_decay",
        "lr_decay_at",
        "flip",
    ];

    pub fn new(seed: u64) -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            epochs: 10,
            seed,
            lr_decay: 0.1,
            lr_decay_at: 2.0 / 3.0,
            flip: false,
        }
    }

    /// Reads the training keys of `kv` (with `prefix` prepended) on top of
    /// the defaults. `seed` must be present.
    pub fn from_kv(kv: &KeyValues, prefix: &str) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        let seed = kv
            .get(&key("seed"))?
            .ok_or_else(|| Error::Config(format!("`{}` is required", key("seed"))))?;
        let d = TrainConfig::new(seed);
        let cfg = TrainConfig {
            lr: kv.get_or(&key("lr"), d.lr)?,
            momentum: kv.get_or(&key("momentum"), d.momentum)?,
            weight_decay: kv.get_or(&key("weight_decay"), d.weight_decay)?,
            batch_size: kv.get_or(&key("batch_size"), d.batch_size)?,
            epochs: kv.get_or(&key("epochs"), d.epochs)?,
            seed,
            lr_decay: kv.get_or(&key("lr_decay"), d.lr_decay)?,
            lr_decay_at: kv.get_or(&key("lr_decay_at"), d.lr_decay_at)?,
            flip: kv.get_or(&key("flip"), d.flip)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0
            && (0.0..=1.0).contains(&self.lr_decay_at);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }

    /// Learning rate in `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f32 {
        let boundary = (self.lr_decay_at * self.epochs as f64).round() as usize;
        if boundary > 0 && epoch >= boundary {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    /// Mean class accuracy on the evaluation split, when one is given.
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub wall_time_s: f64,
    pub checkpoint: Option<std::path::PathBuf>,
}

impl TrainLog {
    /// `epoch,loss,train_acc,test_acc`; wall time is left out so logs of
    /// identical runs are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,test_acc\n");
        for r in &self.epochs {
            let test = r.test_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{:.6},{:.6},{}\n", r.epoch, r.loss, r.train_acc, test));
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Something with parameters that maps a batch to logits and gradients.
pub trait Learner {
    type Batch;

    fn loss_and_grads(&self, batch: &Self::Batch, labels: &[usize]) -> Result<StepOutput>;
    fn logits(&self, batch: &Self::Batch) -> Result<Tensor>;
    /// Calls `f` on every parameter with its gradient key.
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor) -> Result<()>) -> Result<()>;
}

impl Learner for ModelGraph {
    type Batch = Tensor;

    fn loss_and_grads(&self, batch: &Tensor, labels: &[usize]) -> Result<StepOutput> {
        ModelGraph::loss_and_grads(self, batch, labels)
    }

    fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        ModelGraph::logits(self, batch)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor) -> Result<()>) -> Result<()> {
        for (k, t) in self.params_mut().iter_mut() {
            f(k, t)?;
        }
        Ok(())
    }
}

/// Labelled data that assembles batches for a [`Learner`].
pub trait BatchSource: Sync {
    type Batch;

    fn len(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn label(&self, index: usize) -> usize;
    /// Stacks `indices`; `flips[i]` mirrors sample `i` horizontally.
    fn batch(&self, indices: &[usize], flips: &[bool]) -> Result<Self::Batch>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<S: SampleSource + ?Sized> BatchSource for S {
    type Batch = Tensor;

    fn len(&self) -> usize {
        SampleSource::len(self)
    }

    fn num_classes(&self) -> usize {
        SampleSource::num_classes(self)
    }

    fn label(&self, index: usize) -> usize {
        SampleSource::label(self, index)
    }

    fn batch(&self, indices: &[usize], flips: &[bool]) -> Result<Tensor> {
        let samples = indices
            .iter()
            .zip(flips)
            .map(|(&i, &f)| {
                let s = self.sample(i)?;
                Ok(if f { flip_horizontal(&s) } else { s })
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&samples.iter().collect::<Vec<_>>())
    }
}

/// Arg-max predictions for every sample, in index order.
pub fn predict_all<L, S>(learner: &L, src: &S, batch_size: usize) -> Result<Vec<usize>>
where
    L: Learner + Sync,
    S: BatchSource<Batch = L::Batch> + ?Sized,
{
    let n = src.len();
    let starts: Vec<usize> = (0..n).step_by(batch_size.max(1)).collect();
    let chunks = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + batch_size).min(n)).collect();
            let batch = src.batch(&idx, &vec![false; idx.len()])?;
            Ok(argmax_rows(&learner.logits(&batch)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.concat())
}

/// Mean class accuracy of arg-max predictions.
pub fn evaluate<L, S>(learner: &L, src: &S, batch_size: usize) -> Result<f64>
where
    L: Learner + Sync,
    S: BatchSource<Batch = L::Batch> + ?Sized,
{
    let preds = predict_all(learner, src, batch_size)?;
    let labels: Vec<usize> = (0..src.len()).map(|i| src.label(i)).collect();
    mean_class_accuracy(&preds, &labels, src.num_classes())
}

/// Mini-batch SGD over shuffled epochs. Parameters the plan freezes are
/// never written. With zero epochs the learner is returned untouched.
pub fn fit<L, S>(mut learner: L, train: &S, test: Option<&S>, cfg: &TrainConfig, plan: &FreezePlan) -> Result<(L, TrainLog)>
where
    L: Learner + Sync,
    S: BatchSource<Batch = L::Batch> + ?Sized,
{
    cfg.validate()?;
    let started = Instant::now();
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok((learner, log));
    }
    if train.len() == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut flip_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED) ^ epoch as u64);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let flips: Vec<bool> = chunk.iter().map(|_| cfg.flip && flip_rng.gen_bool(0.5)).collect();
            let batch = train.batch(chunk, &flips)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.label(i)).collect();
            let out = learner.loss_and_grads(&batch, &labels)?;
            if !out.loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    loss: out.loss,
                });
            }
            loss_sum += out.loss * chunk.len() as f64;
            correct += argmax_rows(&out.logits)
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            opt.step(&mut learner, &out.grads, lr, plan)?;
        }
        let test_acc = test
            .map(|t| evaluate(&learner, t, cfg.batch_size.max(32)))
            .transpose()?;
        log.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_acc,
        });
    }
    log.wall_time_s = started.elapsed().as_secs_f64();
    Ok((learner, log))
}

/// Trains a single-stream model on images (or any sample source).
pub fn train(
    model: ModelGraph,
    train_set: &dyn SampleSource,
    test_set: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
    plan: &FreezePlan,
) -> Result<(ModelGraph, TrainLog)> {
    fit(model, train_set, test_set, cfg, plan)
}

/// Trains a WSP network on every `grid × grid` patch of `patch` pixels,
/// each labelled with its image's category.
pub fn pretrain_wsp(
    model: ModelGraph,
    train_set: &ImageSet,
    test_set: Option<&ImageSet>,
    grid: usize,
    patch: usize,
    cfg: &TrainConfig,
) -> Result<(ModelGraph, TrainLog)> {
    let channels = train_set.sample_shape().map_or(0, |s| s[0]);
    if model.input_shape() != [channels, patch, patch] {
        return Err(Error::Config(format!(
            "model input {:?} does not match {channels}×{patch}×{patch} patches",
            model.input_shape()
        )));
    }
    let train_view = PatchView::new(train_set, grid, patch)?;
    let test_view = test_set.map(|t| PatchView::new(t, grid, patch)).transpose()?;
    let plan = FreezePlan::train_all(&model);
    let test_dyn: Option<&dyn SampleSource> = test_view.as_ref().map(|v| v as &dyn SampleSource);
    fit(model, &train_view as &dyn SampleSource, test_dyn, cfg, &plan)
}

/// Flattened activations of `layer` for every sample, in source order.
pub fn extract_features(
    model: &ModelGraph,
    layer: &str,
    src: &dyn SampleSource,
    batch_size: usize,
) -> Result<(Tensor, Vec<usize>)> {
    model.layer_index(layer)?;
    let n = src.len();
    if n == 0 {
        return Err(Error::Data("no samples to extract features from".into()));
    }
    let starts: Vec<usize> = (0..n).step_by(batch_size.max(1)).collect();
    let parts = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + batch_size).min(n)).collect();
            let batch = src.batch(&idx, &vec![false; idx.len()])?;
            model.activations(&batch, Some(layer))
        })
        .collect::<Result<Vec<_>>>()?;
    let width = parts[0].numel() / parts[0].shape()[0];
    let data: Vec<f32> = parts.into_iter().flat_map(Tensor::into_data).collect();
    Ok((Tensor::new(vec![n, width], data)?, src.labels()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_preset, ArchPreset, PresetConfig};

    #[test]
    fn lr_schedule() {
        let mut cfg = TrainConfig::new(0);
        cfg.epochs = 3;
        assert_eq!(cfg.lr_at(0), 0.01);
        assert_eq!(cfg.lr_at(1), 0.01);
        assert!((cfg.lr_at(2) - 0.001).abs() < 1e-9);
    }

    #[test]
    fn config_requires_seed() {
        let kv = KeyValues::parse("lr=0.1").unwrap();
        assert!(matches!(TrainConfig::from_kv(&kv, ""), Err(Error::Config(_))));
        let kv = KeyValues::parse("lr=0.1\nseed=4\nepochs=2").unwrap();
        let cfg = TrainConfig::from_kv(&kv, "").unwrap();
        assert_eq!((cfg.lr, cfg.seed, cfg.epochs), (0.1, 4, 2));
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut pc = PresetConfig::defaults(ArchPreset::FusionHead, 2);
        pc.input_size = 4;
        pc.fc_width = 3;
        let m = build_preset(ArchPreset::FusionHead, &pc, 1).unwrap();
        let set = ImageSet::new(vec![Tensor::zeros(&[4]); 2], vec![0, 1], 2).unwrap();
        let mut cfg = TrainConfig::new(0);
        cfg.epochs = 0;
        let (out, log) = train(m.clone(), &set, None, &cfg, &FreezePlan::train_all(&m)).unwrap();
        assert_eq!(out, m);
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn divergence_reports_epoch_and_batch() {
        let mut pc = PresetConfig::defaults(ArchPreset::FusionHead, 2);
        pc.input_size = 4;
        pc.fc_width = 3;
        let m = build_preset(ArchPreset::FusionHead, &pc, 1).unwrap();
        let set = ImageSet::new(vec![Tensor::full(&[4], 1e30); 2], vec![0, 1], 2).unwrap();
        let mut cfg = TrainConfig::new(0);
        cfg.lr = 1e6;
        cfg.momentum = 0.0;
        cfg.batch_size = 1;
        let e = train(m.clone(), &set, None, &cfg, &FreezePlan::train_all(&m)).unwrap_err();
        assert!(matches!(e, Error::Training { epoch: 1, batch: 0, .. }), "{e:?}");
    }
}
