//! One-vs-rest linear SVM trained by Pegasos-style stochastic subgradient
//! descent, with optional per-class loss weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-class loss weights `w_k = (min_i N_i / N_k)^p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub counts: Vec<usize>,
    pub p: f64,
}

/// Exponent used when none is given.
pub const DEFAULT_WEIGHT_EXPONENT: f64 = 2.0;

pub fn compute_class_weights(counts: &[usize], p: f64) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::Data("no class counts".into()));
    }
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {k} has zero samples")));
    }
    if !p.is_finite() || p < 0.0 {
        return Err(Error::param("compute_class_weights", format!("exponent must be ≥ 0, got {p}")));
    }
    let min = *counts.iter().min().expect("non-empty") as f64;
    Ok(ClassWeights {
        weights: counts.iter().map(|&n| (min / n as f64).powf(p)).collect(),
        counts: counts.to_vec(),
        p,
    })
}

pub fn class_counts(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut c = vec![0; num_classes];
    for &l in labels {
        c[l] += 1;
    }
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmConfig {
    /// Loss-vs-margin trade-off; the regulariser is `λ = 1/(C·N)`.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            epochs: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    /// K×D, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub dim: usize,
    pub c: f64,
}

impl SvmModel {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    /// N×K decision values.
    pub fn decision_values(&self, features: &Tensor) -> Result<Vec<f64>> {
        let (n, d) = matrix_dims(features)?;
        if d != self.dim {
            return Err(Error::dim("svm_predict", "features", self.dim, d));
        }
        let k = self.num_classes();
        let x = features.data();
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            for c in 0..k {
                let w = &self.weights[c * d..(c + 1) * d];
                out[i * k + c] = self.bias[c] + row.iter().zip(w).map(|(&a, &b)| a as f64 * b).sum::<f64>();
            }
        }
        Ok(out)
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let k = self.num_classes();
        Ok(self
            .decision_values(features)?
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0
            })
            .collect())
    }
}

fn matrix_dims(features: &Tensor) -> Result<(usize, usize)> {
    match *features.shape() {
        [n, d] => Ok((n, d)),
        _ => Err(Error::dim("svm", "ndim", 2, features.ndim())),
    }
}

/// Trains one binary problem per class. `weights`, when given, scales each
/// sample's hinge term by the weight of its true class.
pub fn train_svm(
    features: &Tensor,
    labels: &[usize],
    weights: Option<&ClassWeights>,
    cfg: &SvmConfig,
) -> Result<SvmModel> {
    let (n, d) = matrix_dims(features)?;
    if labels.len() != n {
        return Err(Error::dim("train_svm", "labels", n, labels.len()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let counts = class_counts(labels, k);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Data("SVM training needs at least two classes".into()));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("labels are not dense: class {k} is empty")));
    }
    let sample_weight: Vec<f64> = match weights {
        Some(w) if w.weights.len() != k => {
            return Err(Error::dim("train_svm", "class weights", k, w.weights.len()));
        }
        Some(w) => labels.iter().map(|&l| w.weights[l]).collect(),
        None => vec![1.0; n],
    };
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(Error::param("train_svm", format!("C must be positive, got {}", cfg.c)));
    }
    let lambda = 1.0 / (cfg.c * n as f64);
    let x = features.data();

    let per_class: Vec<(Vec<f64>, f64)> = (0..k)
        .into_par_iter()
        .map(|class| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (class as u64).wrapping_mul(0x9E37_79B9));
            let mut order: Vec<usize> = (0..n).collect();
            // bias is the last coordinate of the augmented weight
            let mut w = vec![0.0f64; d + 1];
            let mut t = 0usize;
            for _ in 0..cfg.epochs {
                order.shuffle(&mut rng);
                for &i in &order {
                    t += 1;
                    let eta = 1.0 / (lambda * t as f64);
                    let y = if labels[i] == class { 1.0 } else { -1.0 };
                    let row = &x[i * d..(i + 1) * d];
                    let margin = y * (w[d] + row.iter().zip(&w).map(|(&a, &b)| a as f64 * b).sum::<f64>());
                    let shrink = 1.0 - eta * lambda;
                    w.iter_mut().for_each(|v| *v *= shrink);
                    if margin < 1.0 {
                        let step = eta * sample_weight[i] * y;
                        for (wj, &xj) in w.iter_mut().zip(row) {
                            *wj += step * xj as f64;
                        }
                        w[d] += step;
                    }
                }
            }
            let b = w.pop().expect("augmented");
            (w, b)
        })
        .collect();

    let mut weights_out = Vec::with_capacity(k * d);
    let mut bias = Vec::with_capacity(k);
    for (w, b) in per_class {
        weights_out.extend(w);
        bias.push(b);
    }
    Ok(SvmModel {
        weights: weights_out,
        bias,
        dim: d,
        c: cfg.c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_formula() {
        let w = compute_class_weights(&[10, 40], 2.0).unwrap();
        assert_eq!(w.weights, vec![1.0, 0.0625]);
        assert_eq!(compute_class_weights(&[50, 50, 50], 2.0).unwrap().weights, vec![1.0; 3]);
        assert_eq!(compute_class_weights(&[3, 70], 0.0).unwrap().weights, vec![1.0; 2]);
        assert!(matches!(compute_class_weights(&[3, 0], 2.0), Err(Error::Data(_))));
    }

    fn toy() -> (Tensor, Vec<usize>) {
        let pts = [
            (0.0, 0.0, 0),
            (0.5, 0.2, 0),
            (0.2, 0.6, 0),
            (2.0, 2.0, 1),
            (2.5, 1.8, 1),
            (1.9, 2.6, 1),
        ];
        let x = Tensor::new(vec![6, 2], pts.iter().flat_map(|p| [p.0, p.1]).collect()).unwrap();
        (x, pts.iter().map(|p| p.2).collect())
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let (x, y) = toy();
        let m = train_svm(&x, &y, None, &SvmConfig::default()).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y);
    }

    #[test]
    fn unit_weights_match_unweighted() {
        let (x, y) = toy();
        let cfg = SvmConfig::default();
        let uniform = compute_class_weights(&[3, 3], 2.0).unwrap();
        assert_eq!(
            train_svm(&x, &y, None, &cfg).unwrap(),
            train_svm(&x, &y, Some(&uniform), &cfg).unwrap()
        );
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Tensor::zeros(&[3, 2]);
        assert!(matches!(
            train_svm(&x, &[0, 0, 0], None, &SvmConfig::default()),
            Err(Error::Data(_))
        ));
    }
}
