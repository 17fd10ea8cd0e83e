//! Central-difference gradient checking.
//!
//! The analytic gradient comes from the production `f32` tape. The numeric
//! gradient differences the same computation recorded in `f64`, so the check
//! measures the backward pass rather than single-precision rounding noise.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// A computation from leaf tensors to a scalar, recordable in either precision.
pub trait ScalarFn {
    fn build_f32(&self, g: &mut Graph<f32>, inputs: &[Var]) -> Result<Var>;
    fn build_f64(&self, g: &mut Graph<f64>, inputs: &[Var]) -> Result<Var>;
}

/// Precision-generic computations get both builders for free.
pub trait Differentiable {
    fn build<T: Element>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var>;
}

impl<D: Differentiable> ScalarFn for D {
    fn build_f32(&self, g: &mut Graph<f32>, inputs: &[Var]) -> Result<Var> {
        self.build(g, inputs)
    }

    fn build_f64(&self, g: &mut Graph<f64>, inputs: &[Var]) -> Result<Var> {
        self.build(g, inputs)
    }
}

/// Pair of closures with the same body, one per precision. Built by
/// [`dual_fn!`](crate::dual_fn).
pub struct DualFn<A, B>(pub A, pub B);

impl<A, B> ScalarFn for DualFn<A, B>
where
    A: Fn(&mut Graph<f32>, &[Var]) -> Result<Var>,
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    fn build_f32(&self, g: &mut Graph<f32>, inputs: &[Var]) -> Result<Var> {
        (self.0)(g, inputs)
    }

    fn build_f64(&self, g: &mut Graph<f64>, inputs: &[Var]) -> Result<Var> {
        (self.1)(g, inputs)
    }
}

/// Expands one closure body into a [`DualFn`] usable by [`grad_check`].
///
/// ```
/// use depthseed::{dual_fn, autograd::{grad_check, GradCheckConfig}, Tensor};
/// let x = Tensor::new(vec![1, 2], vec![0.5, -1.5]).unwrap();
/// let f = dual_fn!(|g, v| { let r = g.relu(v[0])?; g.sum(r) });
/// let report = grad_check(&[x], &f, &GradCheckConfig::default()).unwrap();
/// assert!(report.passed());
/// ```
#[macro_export]
macro_rules! dual_fn {
    (|$g:ident, $v:ident| $body:expr) => {
        $crate::autograd::DualFn(
            |$g: &mut $crate::autograd::Graph<f32>, $v: &[$crate::autograd::Var]| -> $crate::Result<$crate::autograd::Var> { $body },
            |$g: &mut $crate::autograd::Graph<f64>, $v: &[$crate::autograd::Var]| -> $crate::Result<$crate::autograd::Var> { $body },
        )
    };
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Half-width of the central difference.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Denominator floor of the relative error, so that coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    /// At most this many coordinates are probed per input tensor (sampled
    /// without replacement when the tensor is larger).
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-3,
            tol: 1e-3,
            floor: 1e-4,
            max_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a ReLU or max kink.
    pub skipped_kinks: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn record<T: Element, F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>>(
    inputs: &[Tensor<T>],
    build: F,
) -> Result<(Graph<T>, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar output, got shape {:?}",
            g.value(out).shape()
        )));
    }
    Ok((g, vars, out))
}

/// Compares the analytic gradient of `f` with respect to every tensor in
/// `inputs` against central differences and reports the worst relative error.
///
/// Coordinates whose perturbation flips a ReLU sign or a max-pool winner are
/// skipped: the function is not differentiable there.
pub fn grad_check<F: ScalarFn + ?Sized>(
    inputs: &[Tensor],
    f: &F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        tol: cfg.tol,
    };
    if inputs.is_empty() {
        return Ok(report);
    }

    let (mut g, vars, out) = record(inputs, |g, v| f.build_f32(g, v))?;
    let grads = g.backward(out)?;

    let wide: Vec<Tensor<f64>> = inputs.iter().map(Tensor::cast).collect();
    let (base, _, _) = record(&wide, |g, v| f.build_f64(g, v))?;
    let base_signature = base.kink_signature();
    drop(base);

    let evaluate = |probe: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let (g, _, out) = record(probe, |g, v| f.build_f64(g, v))?;
        Ok((g.scalar_f64(out), g.kink_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = wide.clone();
    for (ti, var) in vars.iter().enumerate() {
        let numel = inputs[ti].numel();
        let analytic = grads
            .get(*var)
            .map(<[f32]>::to_vec)
            .unwrap_or_else(|| vec![0.0; numel]);
        let coords: Vec<usize> = if numel <= cfg.max_coords {
            (0..numel).collect()
        } else {
            let mut c = sample(&mut rng, numel, cfg.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for ci in coords {
            let original = wide[ti].data()[ci];
            probe[ti].data_mut()[ci] = original + cfg.eps;
            let (up, up_sig) = evaluate(&probe)?;
            probe[ti].data_mut()[ci] = original - cfg.eps;
            let (down, down_sig) = evaluate(&probe)?;
            probe[ti].data_mut()[ci] = original;
            if up_sig != base_signature || down_sig != base_signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * cfg.eps);
            let err = relative_error(analytic[ci] as f64, numeric, cfg.floor);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
