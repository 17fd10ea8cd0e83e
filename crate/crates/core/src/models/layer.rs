use std::fmt;

use crate::autograd::kernels::{spp_output_len, window_output_len};
use crate::error::{Error, Result};

/// Hyperparameters of one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Relu,
    Spp {
        levels: Vec<usize>,
    },
    /// Fully connected; flattens its input.
    Linear {
        in_features: usize,
        out_features: usize,
    },
    /// Softmax cross-entropy marker; the forward pass stops in front of it.
    Loss,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }

    pub fn conv(name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self::new(
            name,
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            },
        )
    }

    pub fn maxpool(name: &str, window: usize, stride: usize) -> Self {
        Self::new(name, LayerKind::MaxPool { window, stride })
    }

    pub fn relu(name: &str) -> Self {
        Self::new(name, LayerKind::Relu)
    }

    pub fn spp(name: &str, levels: &[usize]) -> Self {
        Self::new(
            name,
            LayerKind::Spp {
                levels: levels.to_vec(),
            },
        )
    }

    pub fn linear(name: &str, in_features: usize, out_features: usize) -> Self {
        Self::new(
            name,
            LayerKind::Linear {
                in_features,
                out_features,
            },
        )
    }

    pub fn loss() -> Self {
        Self::new("loss", LayerKind::Loss)
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. } | LayerKind::Linear { .. })
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. })
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, LayerKind::Linear { .. })
    }

    /// Shapes of `(weight, bias)` for parameterised layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, in_channels, kernel, kernel], vec![out_channels])),
            LayerKind::Linear {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Error::Config(format!("layer {}: {msg}", self.name));
        match &self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let [c, h, w] = input else {
                    return Err(bad(format!("expects a C×H×W input, got {input:?}")));
                };
                if c != in_channels {
                    return Err(bad(format!("expects {in_channels} input channels, got {c}")));
                }
                let oh = window_output_len(*h, *kernel, *stride, *pad)
                    .ok_or_else(|| bad(format!("kernel {kernel} does not fit height {h}")))?;
                let ow = window_output_len(*w, *kernel, *stride, *pad)
                    .ok_or_else(|| bad(format!("kernel {kernel} does not fit width {w}")))?;
                Ok(vec![*out_channels, oh, ow])
            }
            LayerKind::MaxPool { window, stride } => {
                let [c, h, w] = input else {
                    return Err(bad(format!("expects a C×H×W input, got {input:?}")));
                };
                let oh = window_output_len(*h, *window, *stride, 0)
                    .ok_or_else(|| bad(format!("window {window} does not fit height {h}")))?;
                let ow = window_output_len(*w, *window, *stride, 0)
                    .ok_or_else(|| bad(format!("window {window} does not fit width {w}")))?;
                Ok(vec![*c, oh, ow])
            }
            LayerKind::Relu | LayerKind::Loss => Ok(input.to_vec()),
            LayerKind::Spp { levels } => {
                let [c, h, w] = input else {
                    return Err(bad(format!("expects a C×H×W input, got {input:?}")));
                };
                let extent = (*h).min(*w);
                if let Some(l) = levels.iter().find(|&&l| l == 0 || l > extent) {
                    return Err(bad(format!("pyramid level {l} does not fit a {h}×{w} map")));
                }
                Ok(vec![spp_output_len(*c, levels)])
            }
            LayerKind::Linear {
                in_features,
                out_features,
            } => {
                let flat: usize = input.iter().product();
                if flat != *in_features {
                    return Err(bad(format!("expects {in_features} input features, got {flat}")));
                }
                Ok(vec![*out_features])
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    /// One line of the plain-text architecture descriptor.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => write!(
                f,
                "conv {} in={in_channels} out={out_channels} kernel={kernel} stride={stride} pad={pad}",
                self.name
            ),
            LayerKind::MaxPool { window, stride } => {
                write!(f, "maxpool {} window={window} stride={stride}", self.name)
            }
            LayerKind::Relu => write!(f, "relu {}", self.name),
            LayerKind::Spp { levels } => {
                let l: Vec<String> = levels.iter().map(usize::to_string).collect();
                write!(f, "spp {} levels={}", self.name, l.join(","))
            }
            LayerKind::Linear {
                in_features,
                out_features,
            } => write!(f, "linear {} in={in_features} out={out_features}", self.name),
            LayerKind::Loss => write!(f, "loss {}", self.name),
        }
    }
}

fn kv<'a>(fields: &[&'a str], key: &str, line: &str) -> Result<&'a str> {
    fields
        .iter()
        .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Config(format!("missing `{key}=` in descriptor line `{line}`")))
}

fn num(s: &str, line: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Config(format!("bad integer `{s}` in descriptor line `{line}`")))
}

impl std::str::FromStr for LayerSpec {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (kind, name) = match fields.as_slice() {
            [k, n, ..] => (*k, n.to_string()),
            _ => return Err(Error::Config(format!("malformed descriptor line `{line}`"))),
        };
        let rest = &fields[2..];
        let kind = match kind {
            "conv" => LayerKind::Conv {
                in_channels: num(kv(rest, "in", line)?, line)?,
                out_channels: num(kv(rest, "out", line)?, line)?,
                kernel: num(kv(rest, "kernel", line)?, line)?,
                stride: num(kv(rest, "stride", line)?, line)?,
                pad: num(kv(rest, "pad", line)?, line)?,
            },
            "maxpool" => LayerKind::MaxPool {
                window: num(kv(rest, "window", line)?, line)?,
                stride: num(kv(rest, "stride", line)?, line)?,
            },
            "relu" => LayerKind::Relu,
            "spp" => LayerKind::Spp {
                levels: kv(rest, "levels", line)?
                    .split(',')
                    .map(|s| num(s, line))
                    .collect::<Result<_>>()?,
            },
            "linear" => LayerKind::Linear {
                in_features: num(kv(rest, "in", line)?, line)?,
                out_features: num(kv(rest, "out", line)?, line)?,
            },
            "loss" => LayerKind::Loss,
            other => return Err(Error::Config(format!("unknown layer kind `{other}`"))),
        };
        Ok(LayerSpec { name, kind })
    }
}
