//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

mod gradcheck;
mod graph;
pub mod kernels;

pub use gradcheck::{
    grad_check, relative_error, Differentiable, DualFn, GradCheckConfig, GradCheckReport, ScalarFn,
};
pub use graph::{Gradients, Graph, Var};
