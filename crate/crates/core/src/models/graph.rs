use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{LayerKind, LayerSpec};
use crate::autograd::{Differentiable, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Weight initialisation. Biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Zero-mean Gaussian with a fixed standard deviation.
    Gaussian { std: f32 },
    /// Zero-mean Gaussian with standard deviation `sqrt(2 / fan_in)`.
    He,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Gaussian { std: 0.01 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub scheme: InitScheme,
    pub seed: u64,
}

impl InitConfig {
    pub fn new(scheme: InitScheme, seed: u64) -> Self {
        InitConfig { scheme, seed }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Fresh `(weight, bias)` for a layer. Each layer draws from its own stream
/// keyed by the model seed and the layer name, so re-initialising one layer
/// reproduces exactly what a fresh build would give it.
pub(crate) fn init_layer(spec: &LayerSpec, init: &InitConfig) -> Option<(Tensor, Tensor)> {
    let (ws, bs) = spec.param_shapes()?;
    let fan_in: usize = ws[1..].iter().product();
    let std = match init.scheme {
        InitScheme::Gaussian { std } => std as f64,
        InitScheme::He => (2.0 / fan_in as f64).sqrt(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(init.seed ^ fnv1a(&spec.name));
    Some((Tensor::randn(&ws, std, &mut rng), Tensor::zeros(&bs)))
}

/// An ordered stack of layers together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    layers: Vec<LayerSpec>,
    params: BTreeMap<String, Tensor>,
    input_shape: Vec<usize>,
    init: InitConfig,
}

/// Graph handles for every parameter tensor, keyed `layer.weight` / `layer.bias`.
pub type ParamVars = BTreeMap<String, Var>;

/// Result of one forward/backward pass over a batch.
#[derive(Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub logits: Tensor,
    pub grads: BTreeMap<String, Vec<f32>>,
}

/// Validates names and shape chaining; returns the per-sample output shape of
/// every layer.
pub fn infer_shapes(layers: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut seen = std::collections::BTreeSet::new();
    for l in layers {
        if !seen.insert(l.name.as_str()) {
            return Err(Error::Config(format!("duplicate layer name `{}`", l.name)));
        }
    }
    let mut shape = input_shape.to_vec();
    let mut shapes = Vec::with_capacity(layers.len());
    for l in layers {
        shape = l.output_shape(&shape)?;
        shapes.push(shape.clone());
    }
    Ok(shapes)
}

/// Parameter count of a layer stack without allocating it.
pub fn count_params(layers: &[LayerSpec]) -> usize {
    layers
        .iter()
        .filter_map(LayerSpec::param_shapes)
        .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
        .sum()
}

impl ModelGraph {
    /// Builds and initialises a model; fails if layer shapes do not chain.
    pub fn new(layers: Vec<LayerSpec>, input_shape: Vec<usize>, init: InitConfig) -> Result<Self> {
        infer_shapes(&layers, &input_shape)?;
        let mut params = BTreeMap::new();
        for l in &layers {
            if let Some((w, b)) = init_layer(l, &init) {
                params.insert(l.weight_key(), w);
                params.insert(l.bias_key(), b);
            }
        }
        Ok(ModelGraph {
            layers,
            params,
            input_shape,
            init,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn init(&self) -> InitConfig {
        self.init
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("unknown layer `{name}`")))
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<&Tensor> {
        self.params.get(key)
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    /// Replaces a parameter tensor; the shape must not change.
    pub fn set_param(&mut self, key: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(key)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{key}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Config(format!(
                "parameter `{key}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Width of the final fully connected layer.
    pub fn num_classes(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l.kind {
            LayerKind::Linear { out_features, .. } => Some(out_features),
            _ => None,
        })
    }

    /// Per-sample output shape of every layer at the nominal input shape.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        infer_shapes(&self.layers, &self.input_shape)
    }

    /// Per-sample output shape of `name` at the nominal input shape.
    pub fn shape_after(&self, name: &str) -> Result<Vec<usize>> {
        let idx = self.layer_index(name)?;
        Ok(self.layer_shapes()?.swap_remove(idx))
    }

    /// Draws fresh parameters for `name` from the model's init stream.
    pub fn reinit_layer(&mut self, name: &str) -> Result<()> {
        let spec = self.layers[self.layer_index(name)?].clone();
        if let Some((w, b)) = init_layer(&spec, &self.init) {
            self.params.insert(spec.weight_key(), w);
            self.params.insert(spec.bias_key(), b);
        }
        Ok(())
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn register_params<T: Element>(&self, g: &mut Graph<T>) -> Result<ParamVars> {
        self.params
            .iter()
            .map(|(k, t)| Ok((k.clone(), g.leaf(t.cast())?)))
            .collect()
    }

    /// Records the layer stack on `g`. Stops in front of the loss layer, or
    /// right after `stop_after` when given.
    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        input: Var,
        params: &ParamVars,
        stop_after: Option<&str>,
    ) -> Result<Var> {
        if let Some(name) = stop_after {
            self.layer_index(name)?;
        }
        let p = |key: String| {
            params
                .get(&key)
                .copied()
                .ok_or_else(|| Error::State(format!("parameter `{key}` not registered")))
        };
        let mut x = input;
        for l in &self.layers {
            x = match &l.kind {
                LayerKind::Conv { stride, pad, .. } => {
                    g.conv2d(x, p(l.weight_key())?, p(l.bias_key())?, *stride, *pad)?
                }
                LayerKind::MaxPool { window, stride } => g.maxpool2d(x, *window, *stride)?,
                LayerKind::Relu => g.relu(x)?,
                LayerKind::Spp { levels } => g.spp(x, levels)?,
                LayerKind::Linear { .. } => {
                    let flat = g.flatten(x)?;
                    g.linear(flat, p(l.weight_key())?, p(l.bias_key())?)?
                }
                LayerKind::Loss => break,
            };
            if stop_after == Some(l.name.as_str()) {
                break;
            }
        }
        Ok(x)
    }

    /// Output of layer `name` (or the logits when `None`) for a batch.
    pub fn activations(&self, batch: &Tensor, stop_after: Option<&str>) -> Result<Tensor> {
        let mut g = Graph::<f32>::new();
        let params = self.register_params(&mut g)?;
        let x = g.leaf(batch.clone())?;
        let out = self.forward(&mut g, x, &params, stop_after)?;
        Ok(g.value(out).clone())
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.activations(batch, None)
    }

    /// Arg-max class per sample.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(batch)?))
    }

    /// Mean cross-entropy of a batch and the gradient of every parameter.
    pub fn loss_and_grads(&self, batch: &Tensor, labels: &[usize]) -> Result<StepOutput> {
        let mut g = Graph::<f32>::new();
        let params = self.register_params(&mut g)?;
        let x = g.leaf(batch.clone())?;
        let logits = self.forward(&mut g, x, &params, None)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        let loss_value = g.scalar_f64(loss);
        let logits_value = g.value(logits).clone();
        let mut grads = g.backward(loss)?;
        let grads = params
            .into_iter()
            .map(|(k, v)| {
                let gv = grads.take(v).unwrap_or_else(|| vec![0.0; self.params[&k].numel()]);
                (k, gv)
            })
            .collect();
        Ok(StepOutput {
            loss: loss_value,
            logits: logits_value,
            grads,
        })
    }

    /// Plain-text architecture descriptor, one layer per line.
    pub fn describe(&self) -> String {
        let dims: Vec<String> = self.input_shape.iter().map(usize::to_string).collect();
        let init = match self.init.scheme {
            InitScheme::Gaussian { std } => format!("init gaussian std={std} seed={}", self.init.seed),
            InitScheme::He => format!("init he seed={}", self.init.seed),
        };
        let mut out = format!("depthseed-arch 1\ninput {}\n{init}\n", dims.join(" "));
        for l in &self.layers {
            out.push_str(&l.to_string());
            out.push('\n');
        }
        out
    }

    /// Rebuilds a freshly initialised model from [`describe`](Self::describe) output.
    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("depthseed-arch 1") {
            return Err(Error::Config("architecture descriptor lacks `depthseed-arch 1` header".into()));
        }
        let input_line = lines
            .next()
            .and_then(|l| l.strip_prefix("input "))
            .ok_or_else(|| Error::Config("descriptor is missing the `input` line".into()))?;
        let input_shape = input_line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Config(format!("bad input dim `{s}`"))))
            .collect::<Result<Vec<usize>>>()?;
        let init_line = lines
            .next()
            .and_then(|l| l.strip_prefix("init "))
            .ok_or_else(|| Error::Config("descriptor is missing the `init` line".into()))?;
        let fields: Vec<&str> = init_line.split_whitespace().collect();
        let field = |key: &str| {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Config(format!("init line lacks `{key}=`")))
        };
        let seed = field("seed")?
            .parse()
            .map_err(|_| Error::Config("bad init seed".into()))?;
        let scheme = match fields.first() {
            Some(&"gaussian") => InitScheme::Gaussian {
                std: field("std")?
                    .parse()
                    .map_err(|_| Error::Config("bad init std".into()))?,
            },
            Some(&"he") => InitScheme::He,
            _ => return Err(Error::Config(format!("unknown init `{init_line}`"))),
        };
        let layers = lines.map(str::parse).collect::<Result<Vec<LayerSpec>>>()?;
        ModelGraph::new(layers, input_shape, InitConfig::new(scheme, seed))
    }

    /// Splits the model: layers up to and including `name`, without a loss.
    pub fn truncated(&self, name: &str) -> Result<ModelGraph> {
        let idx = self.layer_index(name)?;
        let layers = self.layers[..=idx].to_vec();
        let params = self
            .params
            .iter()
            .filter(|(k, _)| layers.iter().any(|l| k.split('.').next() == Some(l.name.as_str())))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(ModelGraph {
            layers,
            params,
            input_shape: self.input_shape.clone(),
            init: self.init,
        })
    }

    /// Same model reading inputs of a different per-sample shape (legal when
    /// an SPP layer absorbs the resolution change).
    pub fn with_input_shape(mut self, input_shape: Vec<usize>) -> Result<Self> {
        infer_shapes(&self.layers, &input_shape)?;
        self.input_shape = input_shape;
        Ok(self)
    }

    pub(crate) fn from_parts(
        layers: Vec<LayerSpec>,
        params: BTreeMap<String, Tensor>,
        input_shape: Vec<usize>,
        init: InitConfig,
    ) -> Result<Self> {
        infer_shapes(&layers, &input_shape)?;
        Ok(ModelGraph {
            layers,
            params,
            input_shape,
            init,
        })
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape().last().copied().unwrap_or(1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Cross-entropy of a model on a fixed batch as a function of
/// `[input, parameters in key order]`; the target of model gradient checks.
pub struct ModelLoss<'a> {
    pub model: &'a ModelGraph,
    pub labels: Vec<usize>,
}

impl ModelLoss<'_> {
    /// Inputs in the order `build` expects them.
    pub fn inputs(&self, batch: &Tensor) -> Vec<Tensor> {
        std::iter::once(batch.clone())
            .chain(self.model.params.values().cloned())
            .collect()
    }
}

impl Differentiable for ModelLoss<'_> {
    fn build<T: Element>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var> {
        let params: ParamVars = self
            .model
            .params
            .keys()
            .cloned()
            .zip(inputs[1..].iter().copied())
            .collect();
        let logits = self.model.forward(g, inputs[0], &params, None)?;
        g.softmax_cross_entropy(logits, &self.labels)
    }
}
