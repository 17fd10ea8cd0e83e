use std::collections::BTreeMap;

use super::freeze::FreezePlan;
use super::trainer::Learner;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Momentum SGD with L2 weight decay:
/// `v ← m·v − lr·(g + wd·θ)`, `θ ← θ + v`.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: BTreeMap<String, Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f32, weight_decay: f32) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// Updates one parameter tensor in place.
    pub fn update(&mut self, key: &str, param: &mut Tensor, grad: &[f32], lr: f32) -> Result<()> {
        if grad.len() != param.numel() {
            return Err(Error::dim("sgd_step", key.to_string(), param.numel(), grad.len()));
        }
        let v = self
            .velocity
            .entry(key.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        for ((theta, &g), v) in param.data_mut().iter_mut().zip(grad).zip(v.iter_mut()) {
            *v = self.momentum * *v - lr * (g + self.weight_decay * *theta);
            *theta += *v;
        }
        Ok(())
    }

    /// Applies `grads` to every parameter the plan trains; frozen ones are
    /// not touched.
    pub fn step<L: Learner + ?Sized>(
        &mut self,
        learner: &mut L,
        grads: &BTreeMap<String, Vec<f32>>,
        lr: f32,
        plan: &FreezePlan,
    ) -> Result<()> {
        learner.visit_params_mut(&mut |key, param| {
            if !plan.trains_param(key) {
                return Ok(());
            }
            let g = grads
                .get(key)
                .ok_or_else(|| Error::State(format!("no gradient for `{key}`")))?;
            self.update(key, param, g, lr)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(theta: f32, g: f32, lr: f32, wd: f32) -> f32 {
        let mut p = Tensor::scalar(theta);
        Sgd::new(0.0, wd).update("w", &mut p, &[g], lr).unwrap();
        p.data()[0]
    }

    #[test]
    fn plain_step() {
        assert!((one_step(1.0, 0.5, 0.1, 0.0) - 0.95).abs() < 1e-7);
    }

    #[test]
    fn decay_step() {
        assert!((one_step(1.0, 0.0, 0.1, 0.5) - 0.95).abs() < 1e-7);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = Tensor::scalar(0.0);
        let mut opt = Sgd::new(0.9, 0.0);
        opt.update("w", &mut p, &[1.0], 1.0).unwrap();
        opt.update("w", &mut p, &[1.0], 1.0).unwrap();
        // v1 = −1, v2 = −0.9 − 1
        assert!((p.data()[0] + 2.9).abs() < 1e-6);
    }
}
