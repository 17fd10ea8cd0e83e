//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every forward operation as a node holding its output
//! and whatever the backward pass needs (argmax indices, softmax
//! probabilities). Nodes are appended in execution order, so the tape is
//! already a topological order and `backward` walks it once in reverse.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::kernels;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Spp {
        input: Var,
        argmax: Vec<u32>,
    },
    Relu {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Flatten {
        input: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    WeightedSum {
        input: Var,
        coeffs: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    // f64 result of scalar reductions before rounding to T
    exact: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TapeState {
    Recording,
    Consumed,
}

/// Records a forward computation for a single backward pass.
#[derive(Debug)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    state: TapeState,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T = f32> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            state: TapeState::Recording,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.state == TapeState::Consumed {
            return Err(Error::State(
                "graph already differentiated; build a new graph for another forward pass".into(),
            ));
        }
        debug_assert!(value.all_finite() || !matches!(op, Op::Leaf));
        self.nodes.push(Node {
            value,
            op,
            exact: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, var: Var) -> Result<&Node<T>> {
        self.nodes
            .get(var.0)
            .ok_or_else(|| Error::State(format!("variable {} does not belong to this graph", var.0)))
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    /// Scalar value of `var` in `f64`; exact for reductions accumulated in `f64`.
    pub fn scalar_f64(&self, var: Var) -> f64 {
        let node = &self.nodes[var.0];
        node.exact.unwrap_or(node.value.data()[0].as_f64())
    }

    fn set_exact(&mut self, var: Var, v: f64) -> Var {
        self.nodes[var.0].exact = Some(v);
        var
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d_forward(
            &self.node(input)?.value,
            &self.node(weight)?.value,
            &self.node(bias)?.value,
            stride,
            pad,
        )?;
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
        )
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d_forward(&self.node(input)?.value, window, stride)?;
        self.push(out, Op::MaxPool { input, argmax })
    }

    pub fn spp(&mut self, input: Var, levels: &[usize]) -> Result<Var> {
        let (out, argmax) = kernels::spp_forward(&self.node(input)?.value, levels)?;
        self.push(out, Op::Spp { input, argmax })
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = &self.node(input)?.value;
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Relu { input })
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::linear_forward(
            &self.node(input)?.value,
            &self.node(weight)?.value,
            &self.node(bias)?.value,
        )?;
        self.push(out, Op::Linear { input, weight, bias })
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let x = &self.node(input)?.value;
        if x.ndim() == 2 {
            return Ok(input);
        }
        if x.ndim() < 2 {
            return Err(Error::dim("flatten", "ndim", 2, x.ndim()));
        }
        let n = x.shape()[0];
        let out = x.clone().reshape(&[n, x.numel() / n])?;
        self.push(out, Op::Flatten { input })
    }

    /// Concatenates `N×Dᵢ` matrices along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.node(*parts.first().ok_or_else(|| Error::param("concat", "no inputs"))?)?;
        let n = first.value.shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = &self.node(p)?.value;
            if v.ndim() != 2 {
                return Err(Error::dim("concat", "ndim", 2, v.ndim()));
            }
            if v.shape()[0] != n {
                return Err(Error::dim("concat", "batch", n, v.shape()[0]));
            }
            widths.push(v.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for row in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p.0].value.data()[row * w..(row + 1) * w]);
            }
        }
        let out = Tensor::new(vec![n, total], data)?;
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    /// Scalar `Σ cᵢ·xᵢ`, accumulated in `f64`.
    pub fn weighted_sum(&mut self, input: Var, coeffs: &[f32]) -> Result<Var> {
        let x = &self.node(input)?.value;
        if coeffs.len() != x.numel() {
            return Err(Error::dim("weighted_sum", "coeffs", x.numel(), coeffs.len()));
        }
        let s: f64 = x
            .data()
            .iter()
            .zip(coeffs)
            .map(|(&a, &c)| a.as_f64() * c as f64)
            .sum();
        let v = self.push(
            Tensor::scalar(T::from_f64(s)),
            Op::WeightedSum {
                input,
                coeffs: coeffs.iter().map(|&c| T::from_f64(c as f64)).collect(),
            },
        )?;
        Ok(self.set_exact(v, s))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let n = self.node(input)?.value.numel();
        self.weighted_sum(input, &vec![1.0f32; n])
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = kernels::softmax_cross_entropy(&self.node(logits)?.value, labels)?;
        let v = self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )?;
        Ok(self.set_exact(v, loss))
    }

    /// Hash of every discrete decision taken in the forward pass: ReLU sign
    /// patterns and max-pool winners. Two passes with equal signatures ran
    /// through the same piecewise-linear region.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for v in self.nodes[input.0].value.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } | Op::Spp { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse pass from a scalar node. The tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward operation".into()));
        }
        if self.state == TapeState::Consumed {
            return Err(Error::State(
                "backward already ran on this graph; rerun the forward pass first".into(),
            ));
        }
        let root = self.node(loss)?;
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                root.value.shape()
            )));
        }
        self.state = TapeState::Consumed;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        fn accumulate<T: Element>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
            match slot {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(upstream);
                    continue;
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let g = kernels::conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        &self.nodes[bias.0].value,
                        *stride,
                        *pad,
                        &upstream,
                    )?;
                    accumulate(&mut grads[input.0], g.input);
                    accumulate(&mut grads[weight.0], g.weight);
                    accumulate(&mut grads[bias.0], g.bias);
                }
                Op::MaxPool { input, argmax } | Op::Spp { input, argmax } => {
                    let len = self.nodes[input.0].value.numel();
                    accumulate(&mut grads[input.0], kernels::scatter_argmax(len, argmax, &upstream));
                }
                Op::Relu { input } => {
                    let x = self.nodes[input.0].value.data();
                    let g = upstream
                        .iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(&mut grads[input.0], g);
                }
                Op::Linear { input, weight, bias } => {
                    let g = kernels::linear_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        &upstream,
                    )?;
                    accumulate(&mut grads[input.0], g.input);
                    accumulate(&mut grads[weight.0], g.weight);
                    accumulate(&mut grads[bias.0], g.bias);
                }
                Op::Flatten { input } => accumulate(&mut grads[input.0], upstream),
                Op::Concat { parts } => {
                    let n = node.value.shape()[0];
                    let total = node.value.shape()[1];
                    let mut start = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.shape()[1];
                        let mut g = Vec::with_capacity(n * w);
                        for row in 0..n {
                            g.extend_from_slice(&upstream[row * total + start..row * total + start + w]);
                        }
                        accumulate(&mut grads[p.0], g);
                        start += w;
                    }
                }
                Op::WeightedSum { input, coeffs } => {
                    let u = upstream[0];
                    accumulate(&mut grads[input.0], coeffs.iter().map(|&c| c * u).collect());
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let k = self.nodes[logits.0].value.shape()[1];
                    let n = labels.len();
                    let scale = upstream[0] / T::from_f64(n as f64);
                    let mut g = probs.clone();
                    for (row, &label) in labels.iter().enumerate() {
                        g[row * k + label] -= T::one();
                    }
                    g.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads[logits.0], g);
                }
            }
        }

        // Only leaves keep their gradients.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_and_mask() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap()).unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_has_zero_gradient() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::full(&[5], -0.5)).unwrap();
        let y = g.relu(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let w = g.leaf(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.leaf(Tensor::zeros(&[2])).unwrap();
        let y = g.linear(x, w, b).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
        assert_eq!(grads.get(b).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn second_backward_is_a_state_error() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::full(&[2], 1.0)).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::State(_))));
        assert!(matches!(g.relu(x), Err(Error::State(_))));
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let mut g = Graph::<f32>::new();
        let mut other = Graph::<f32>::new();
        let v = other.leaf(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(g.backward(v), Err(Error::State(_))));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::full(&[2], 1.0)).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut g = Graph::<f32>::new();
        let z = g.leaf(Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        let l = g.softmax_cross_entropy(z, &[1]).unwrap();
        let grads = g.backward(l).unwrap();
        let e: Vec<f64> = [0.5f64, -1.0, 2.0].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        let expected = [e[0] / s, e[1] / s - 1.0, e[2] / s];
        for (a, b) in grads.get(z).unwrap().iter().zip(expected) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_splits_gradient() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap()).unwrap();
        let b = g.leaf(Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = g.weighted_sum(c, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[1.0, 4.0]);
        assert_eq!(grads.get(b).unwrap(), &[2.0, 3.0, 5.0, 6.0]);
    }
}
