//! Fixed network layouts.
//!
//! | preset       | layers                                                                 |
//! |--------------|------------------------------------------------------------------------|
//! | `alexlike`   | conv1 11/s4 · pool1 3/2 · conv2 5/p2 · pool2 3/2 · conv3..conv5 3/p1 · pool5 3/2 · fc6 · fc7 · fc8 |
//! | `wsp`        | conv1 5/s2/p2 · pool1 2/2 · conv2 3/p1 · pool2 2/2 · conv3 3/p1 · fc8  |
//! | `dcnn`       | wsp conv1..conv3 · conv4 3/p1 · spp [1,2,3] · fc7 · fc8                |
//! | `fusion-head`| fuse1 · fc8                                                            |
//!
//! Every conv and hidden fc layer is followed by a ReLU; every preset ends
//! with a softmax loss.

use std::fmt;
use std::str::FromStr;

use super::graph::{count_params, infer_shapes, InitConfig, InitScheme, ModelGraph};
use super::layer::LayerSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchPreset {
    AlexLike,
    Wsp,
    Dcnn,
    FusionHead,
}

impl ArchPreset {
    pub const ALL: [ArchPreset; 4] = [
        ArchPreset::AlexLike,
        ArchPreset::Wsp,
        ArchPreset::Dcnn,
        ArchPreset::FusionHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchPreset::AlexLike => "alexlike",
            ArchPreset::Wsp => "wsp",
            ArchPreset::Dcnn => "dcnn",
            ArchPreset::FusionHead => "fusion-head",
        }
    }

    fn conv_count(self) -> usize {
        match self {
            ArchPreset::AlexLike => 5,
            ArchPreset::Wsp => 3,
            ArchPreset::Dcnn => 4,
            ArchPreset::FusionHead => 0,
        }
    }
}

impl fmt::Display for ArchPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}` (alexlike, wsp, dcnn, fusion-head)")))
    }
}

/// Everything a preset leaves open.
#[derive(Clone, Debug, PartialEq)]
pub struct PresetConfig {
    pub categories: usize,
    pub in_channels: usize,
    /// Square input side; for `fusion-head` the input feature width.
    pub input_size: usize,
    pub conv_widths: Vec<usize>,
    /// Width of the hidden fc layers (fc6/fc7, or the fusion projection).
    pub fc_width: usize,
    pub spp_levels: Vec<usize>,
    pub init: InitScheme,
}

impl PresetConfig {
    /// Documented defaults for `preset`.
    pub fn defaults(preset: ArchPreset, categories: usize) -> Self {
        let (input_size, conv_widths, fc_width) = match preset {
            ArchPreset::AlexLike => (227, vec![96, 256, 384, 384, 256], 4096),
            ArchPreset::Wsp => (35, vec![64, 128, 256], 512),
            ArchPreset::Dcnn => (235, vec![64, 128, 256, 512], 512),
            ArchPreset::FusionHead => (1024, vec![], 512),
        };
        PresetConfig {
            categories,
            in_channels: 3,
            input_size,
            conv_widths,
            fc_width,
            spp_levels: vec![1, 2, 3],
            init: InitScheme::default(),
        }
    }
}

fn conv_pool_trunk(cfg: &PresetConfig, with_conv4: bool) -> Vec<LayerSpec> {
    let w = &cfg.conv_widths;
    let mut layers = vec![
        LayerSpec::conv("conv1", cfg.in_channels, w[0], 5, 2, 2),
        LayerSpec::relu("relu1"),
        LayerSpec::maxpool("pool1", 2, 2),
        LayerSpec::conv("conv2", w[0], w[1], 3, 1, 1),
        LayerSpec::relu("relu2"),
        LayerSpec::maxpool("pool2", 2, 2),
        LayerSpec::conv("conv3", w[1], w[2], 3, 1, 1),
        LayerSpec::relu("relu3"),
    ];
    if with_conv4 {
        layers.push(LayerSpec::conv("conv4", w[2], w[3], 3, 1, 1));
        layers.push(LayerSpec::relu("relu4"));
    }
    layers
}

fn flat_width(layers: &[LayerSpec], input: &[usize]) -> Result<usize> {
    let shapes = infer_shapes(layers, input)?;
    Ok(shapes.last().map_or(input.iter().product(), |s| s.iter().product()))
}

/// Layer list of a preset, validated against its input size.
pub fn preset_layers(preset: ArchPreset, cfg: &PresetConfig) -> Result<(Vec<LayerSpec>, Vec<usize>)> {
    if cfg.categories < 2 {
        return Err(Error::Config(format!("need at least 2 categories, got {}", cfg.categories)));
    }
    if cfg.conv_widths.len() != preset.conv_count() {
        return Err(Error::Config(format!(
            "{preset} needs {} conv widths, got {}",
            preset.conv_count(),
            cfg.conv_widths.len()
        )));
    }
    if cfg.conv_widths.contains(&0) || cfg.fc_width == 0 || cfg.input_size == 0 {
        return Err(Error::Config("widths and input size must be positive".into()));
    }
    let k = cfg.categories;
    let image = vec![cfg.in_channels, cfg.input_size, cfg.input_size];
    let wrap = |e: Error| Error::Config(format!("{preset} does not fit input size {}: {e}", cfg.input_size));
    let (mut layers, input) = match preset {
        ArchPreset::AlexLike => {
            let w = &cfg.conv_widths;
            let mut layers = vec![
                LayerSpec::conv("conv1", cfg.in_channels, w[0], 11, 4, 0),
                LayerSpec::relu("relu1"),
                LayerSpec::maxpool("pool1", 3, 2),
                LayerSpec::conv("conv2", w[0], w[1], 5, 1, 2),
                LayerSpec::relu("relu2"),
                LayerSpec::maxpool("pool2", 3, 2),
                LayerSpec::conv("conv3", w[1], w[2], 3, 1, 1),
                LayerSpec::relu("relu3"),
                LayerSpec::conv("conv4", w[2], w[3], 3, 1, 1),
                LayerSpec::relu("relu4"),
                LayerSpec::conv("conv5", w[3], w[4], 3, 1, 1),
                LayerSpec::relu("relu5"),
                LayerSpec::maxpool("pool5", 3, 2),
            ];
            let flat = flat_width(&layers, &image).map_err(wrap)?;
            layers.extend([
                LayerSpec::linear("fc6", flat, cfg.fc_width),
                LayerSpec::relu("relu6"),
                LayerSpec::linear("fc7", cfg.fc_width, cfg.fc_width),
                LayerSpec::relu("relu7"),
                LayerSpec::linear("fc8", cfg.fc_width, k),
            ]);
            (layers, image)
        }
        ArchPreset::Wsp => {
            let mut layers = conv_pool_trunk(cfg, false);
            let flat = flat_width(&layers, &image).map_err(wrap)?;
            layers.push(LayerSpec::linear("fc8", flat, k));
            (layers, image)
        }
        ArchPreset::Dcnn => {
            let mut layers = conv_pool_trunk(cfg, true);
            layers.push(LayerSpec::spp("spp", &cfg.spp_levels));
            let flat = flat_width(&layers, &image).map_err(wrap)?;
            layers.extend([
                LayerSpec::linear("fc7", flat, cfg.fc_width),
                LayerSpec::relu("relu7"),
                LayerSpec::linear("fc8", cfg.fc_width, k),
            ]);
            (layers, image)
        }
        ArchPreset::FusionHead => (
            vec![
                LayerSpec::linear("fuse1", cfg.input_size, cfg.fc_width),
                LayerSpec::relu("relu_fuse1"),
                LayerSpec::linear("fc8", cfg.fc_width, k),
            ],
            vec![cfg.input_size],
        ),
    };
    layers.push(LayerSpec::loss());
    infer_shapes(&layers, &input).map_err(wrap)?;
    Ok((layers, input))
}

/// Builds and initialises a preset network.
pub fn build_preset(preset: ArchPreset, cfg: &PresetConfig, seed: u64) -> Result<ModelGraph> {
    let (layers, input) = preset_layers(preset, cfg)?;
    ModelGraph::new(layers, input, InitConfig::new(cfg.init, seed))
}

/// Parameter count of a preset without allocating it.
pub fn preset_param_count(preset: ArchPreset, cfg: &PresetConfig) -> Result<usize> {
    Ok(count_params(&preset_layers(preset, cfg)?.0))
}
