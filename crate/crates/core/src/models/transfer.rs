use super::graph::{infer_shapes, init_layer, ModelGraph};
use super::layer::{LayerKind, LayerSpec};
use crate::error::{Error, Result};

/// Copies every conv layer of `src` into the same-named layer of `dst` and
/// re-initialises all fully connected layers of `dst`.
///
/// Conv layers of `dst` with no counterpart in `src` keep their values.
pub fn transfer_conv_weights(src: &ModelGraph, dst: &ModelGraph) -> Result<ModelGraph> {
    let mut out = dst.clone();
    for layer in src.layers().iter().filter(|l| l.is_conv()) {
        let Some(target) = dst.layer(&layer.name) else {
            continue;
        };
        if !target.is_conv() {
            return Err(Error::Transfer {
                layer: layer.name.clone(),
                msg: "destination layer is not a convolution".into(),
            });
        }
        if target.kind != layer.kind {
            return Err(Error::Transfer {
                layer: layer.name.clone(),
                msg: format!("source `{layer}` vs destination `{target}`"),
            });
        }
        for key in [layer.weight_key(), layer.bias_key()] {
            let value = src.param(&key).expect("conv layer has parameters").clone();
            out.set_param(&key, value)?;
        }
    }
    let linear: Vec<String> = out
        .layers()
        .iter()
        .filter(|l| l.is_linear())
        .map(|l| l.name.clone())
        .collect();
    for name in linear {
        out.reinit_layer(&name)?;
    }
    Ok(out)
}

/// Drops every layer above `keep_through` and attaches a fresh `fc8` of
/// width `categories` followed by the loss.
pub fn remove_top_layers(model: &ModelGraph, keep_through: &str, categories: usize) -> Result<ModelGraph> {
    let idx = model.layer_index(keep_through)?;
    let kept = &model.layers()[..=idx];
    if kept
        .iter()
        .any(|l| l.name == "fc8" || matches!(l.kind, LayerKind::Loss))
    {
        return Err(Error::Config(format!(
            "cannot keep through `{keep_through}`: fc8 and the loss are always replaced"
        )));
    }
    let shapes = infer_shapes(kept, model.input_shape())?;
    let flat: usize = shapes[idx].iter().product();
    let mut layers = kept.to_vec();
    let fc8 = LayerSpec::linear("fc8", flat, categories);
    layers.push(fc8.clone());
    layers.push(LayerSpec::loss());

    let mut params: std::collections::BTreeMap<_, _> = model
        .params()
        .iter()
        .filter(|(k, _)| kept.iter().any(|l| k.split('.').next() == Some(l.name.as_str())))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let (w, b) = init_layer(&fc8, &model.init()).expect("fc8 has parameters");
    params.insert(fc8.weight_key(), w);
    params.insert(fc8.bias_key(), b);
    ModelGraph::from_parts(layers, params, model.input_shape().to_vec(), model.init())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_preset, ArchPreset, InitScheme, PresetConfig};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(preset: ArchPreset, seed: u64) -> ModelGraph {
        let mut cfg = PresetConfig::defaults(preset, 3);
        cfg.conv_widths.truncate(preset_convs(preset));
        for w in cfg.conv_widths.iter_mut() {
            *w = 4;
        }
        cfg.fc_width = 8;
        cfg.init = InitScheme::He;
        if preset == ArchPreset::Dcnn {
            cfg.input_size = 35;
        }
        build_preset(preset, &cfg, seed).unwrap()
    }

    fn preset_convs(preset: ArchPreset) -> usize {
        match preset {
            ArchPreset::AlexLike => 5,
            ArchPreset::Wsp => 3,
            ArchPreset::Dcnn => 4,
            ArchPreset::FusionHead => 0,
        }
    }

    #[test]
    fn transferred_stack_computes_the_same_features() {
        let wsp = small(ArchPreset::Wsp, 1);
        let dcnn = small(ArchPreset::Dcnn, 2);
        let out = transfer_conv_weights(&wsp, &dcnn).unwrap();
        let x = Tensor::randn(&[3, 3, 35, 35], 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let a = wsp.activations(&x, Some("relu3")).unwrap();
        let b = out.activations(&x, Some("relu3")).unwrap();
        assert_eq!(a.data(), b.data());
        // conv4 keeps its own values; fc layers are redrawn
        assert_eq!(out.param("conv4.weight"), dcnn.param("conv4.weight"));
        let mut fresh = dcnn.clone();
        fresh.reinit_layer("fc7").unwrap();
        assert_eq!(out.param("fc7.weight"), fresh.param("fc7.weight"));
    }

    #[test]
    fn transfer_into_itself_keeps_convs() {
        let wsp = small(ArchPreset::Wsp, 1);
        let out = transfer_conv_weights(&wsp, &wsp).unwrap();
        for l in wsp.layers().iter().filter(|l| l.is_conv()) {
            assert_eq!(out.param(&l.weight_key()), wsp.param(&l.weight_key()));
        }
    }

    #[test]
    fn kernel_mismatch_names_the_layer() {
        let wsp = small(ArchPreset::Wsp, 1);
        let mut layers = wsp.layers().to_vec();
        let conv2 = layers.iter().position(|l| l.name == "conv2").unwrap();
        layers[conv2] = LayerSpec::conv("conv2", 4, 4, 5, 1, 2);
        let odd = ModelGraph::new(layers, wsp.input_shape().to_vec(), wsp.init()).unwrap();
        match transfer_conv_weights(&odd, &small(ArchPreset::Dcnn, 2)) {
            Err(Error::Transfer { layer, .. }) => assert_eq!(layer, "conv2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn keep_through_conv3_ends_in_fc8() {
        let alex = {
            let mut cfg = PresetConfig::defaults(ArchPreset::AlexLike, 3);
            cfg.conv_widths = vec![4; 5];
            cfg.fc_width = 8;
            build_preset(ArchPreset::AlexLike, &cfg, 1).unwrap()
        };
        let kept = remove_top_layers(&alex, "conv3", 5).unwrap();
        let names: Vec<&str> = kept.layers().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(&names[names.len() - 3..], &["conv3", "fc8", "loss"]);
        assert_eq!(kept.num_classes(), Some(5));
        assert_eq!(kept.param("conv3.weight"), alex.param("conv3.weight"));
        assert!(kept.param("conv4.weight").is_none());
        assert!(matches!(remove_top_layers(&alex, "conv9", 5), Err(Error::Config(_))));
    }

    #[test]
    fn keeping_everything_below_fc8_only_redraws_fc8() {
        let d = small(ArchPreset::Dcnn, 4);
        let kept = remove_top_layers(&d, "relu7", 3).unwrap();
        assert_eq!(kept.layers(), d.layers());
        let mut fresh = d.clone();
        fresh.reinit_layer("fc8").unwrap();
        assert_eq!(kept, fresh);
    }
}
