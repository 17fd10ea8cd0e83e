//! Learnability, freezing, fusion and feature-extraction behaviour.

use depthseed::data::{ImageSet, SampleSource};
use depthseed::eval::{compute_class_weights, train_svm, SvmConfig};
use depthseed::fusion::{build_rgbd_model, train_rgbd, PairedSet};
use depthseed::models::{build_preset, transfer_conv_weights, ArchPreset, InitScheme, ModelGraph, PresetConfig};
use depthseed::training::{extract_features, pretrain_wsp, train, FreezePlan, TrainConfig};
use depthseed::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(preset: ArchPreset, input: usize, seed: u64) -> ModelGraph {
    let mut pc = PresetConfig::defaults(preset, 3);
    pc.init = InitScheme::He;
    pc.conv_widths = vec![8; pc.conv_widths.len()];
    pc.fc_width = 16;
    pc.input_size = input;
    build_preset(preset, &pc, seed).unwrap()
}

fn images(n: usize, shape: &[usize], classes: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..n).map(|_| Tensor::randn(shape, 1.0, &mut rng)).collect();
    ImageSet::new(images, (0..n).map(|i| i % classes).collect(), classes).unwrap()
}

fn cfg(epochs: usize, batch: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(seed);
    c.epochs = epochs;
    c.batch_size = batch;
    c
}

#[test]
fn every_preset_overfits_a_single_batch() {
    for (preset, input) in [(ArchPreset::AlexLike, 67), (ArchPreset::Wsp, 35), (ArchPreset::Dcnn, 32), (ArchPreset::FusionHead, 12)] {
        let m = model(preset, input, 1);
        let shape = m.input_shape().to_vec();
        let data = images(4, &shape, 3, 2);
        let plan = FreezePlan::train_all(&m);
        // one batch per epoch, so epochs are steps
        let (_, log) = train(m, &data, None, &cfg(500, 4, 3), &plan).unwrap();
        let best = log.epochs.iter().map(|e| e.loss).fold(f64::INFINITY, f64::min);
        assert!(best < 0.01, "{}: best loss {best}", preset.name());
    }
}

#[test]
fn wsp_overfits_one_image() {
    let m = model(ArchPreset::Wsp, 35, 4);
    let mut data = images(1, &[3, 64, 64], 1, 5);
    data.num_classes = 3;
    let (_, log) = pretrain_wsp(m, &data, None, 4, 35, &cfg(30, 16, 6)).unwrap();
    assert!(log.last().unwrap().loss < 0.05, "{}", log.last().unwrap().loss);
}

#[test]
fn wsp_then_transfer_then_train_runs_end_to_end() {
    let data = images(6, &[3, 48, 48], 3, 7);
    let (wsp, _) = pretrain_wsp(model(ArchPreset::Wsp, 35, 8), &data, None, 2, 35, &cfg(1, 8, 9)).unwrap();
    let dcnn = transfer_conv_weights(&wsp, &model(ArchPreset::Dcnn, 48, 10)).unwrap();
    assert_eq!(dcnn.param("conv2.weight"), wsp.param("conv2.weight"));
    let plan = FreezePlan::train_all(&dcnn);
    let (trained, log) = train(dcnn, &data, Some(&data), &cfg(1, 3, 11), &plan).unwrap();
    assert_eq!(log.epochs.len(), 1);
    assert!(log.last().unwrap().test_acc.is_some());
    assert!(trained.params().values().all(Tensor::all_finite));
}

#[test]
fn zero_epochs_returns_the_model_untouched() {
    let m = model(ArchPreset::Dcnn, 32, 12);
    let data = images(3, &[3, 32, 32], 3, 13);
    let (out, log) = train(m.clone(), &data, None, &cfg(0, 2, 14), &FreezePlan::train_all(&m)).unwrap();
    assert_eq!(out, m);
    assert!(log.epochs.is_empty());
}

#[test]
fn freezing_all_but_fc8_changes_only_fc8() {
    let m = model(ArchPreset::AlexLike, 67, 15);
    let data = images(6, &[3, 67, 67], 3, 16);
    let mut plan = FreezePlan::train_all(&m);
    plan.freeze_all_but(&[]);
    let (out, _) = train(m.clone(), &data, None, &cfg(2, 3, 17), &plan).unwrap();
    for (key, before) in m.params() {
        let after = out.param(key).unwrap();
        if key.starts_with("fc8.") {
            assert_ne!(after, before, "{key}");
        } else {
            assert!(after.bitwise_eq(before), "{key}");
        }
    }
}

#[test]
fn training_is_deterministic() {
    let m = model(ArchPreset::Dcnn, 32, 18);
    let data = images(8, &[3, 32, 32], 3, 19);
    let mut c = cfg(2, 3, 20);
    c.flip = true;
    let plan = FreezePlan::train_all(&m);
    let (a, la) = train(m.clone(), &data, None, &c, &plan).unwrap();
    let (b, lb) = train(m, &data, None, &c, &plan).unwrap();
    assert!(a.params().iter().all(|(k, v)| v.bitwise_eq(b.param(k).unwrap())));
    assert_eq!(la.to_csv(), lb.to_csv());
}

#[test]
fn rgbd_training_updates_both_branches_and_the_head() {
    let rgb = model(ArchPreset::Dcnn, 32, 21);
    let depth = model(ArchPreset::Dcnn, 32, 22);
    let fused = build_rgbd_model(&rgb, &depth, "relu7", "relu7", 8, 3, 23).unwrap();
    let before = fused.params();
    let pairs = PairedSet::new(images(4, &[3, 32, 32], 3, 24), images(4, &[3, 32, 32], 3, 25)).unwrap();
    // a single step
    let (after, log) = train_rgbd(fused, &pairs, None, &cfg(1, 4, 26), None).unwrap();
    assert!(log.last().unwrap().loss > 0.0);
    let after = after.params();
    for key in ["rgb/conv1.weight", "depth/conv1.weight", "head/fuse1.weight", "head/fc8.weight"] {
        assert_ne!(after[key], before[key], "{key} did not change");
    }
}

#[test]
fn feature_widths_follow_the_layer() {
    let m = model(ArchPreset::Dcnn, 32, 27);
    let data = images(5, &[3, 32, 32], 3, 28);
    let (relu7, labels) = extract_features(&m, "relu7", &data, 2).unwrap();
    assert_eq!(relu7.shape(), [5, 16]);
    assert_eq!(labels, data.labels());
    let (spp, _) = extract_features(&m, "spp", &data, 2).unwrap();
    assert_eq!(spp.shape(), [5, 14 * 8]);
    let (conv1, _) = extract_features(&m, "conv1", &data, 4).unwrap();
    assert_eq!(conv1.shape()[1], m.shape_after("conv1").unwrap().iter().product::<usize>());
    assert!(extract_features(&m, "conv9", &data, 2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn class_weights_follow_permutation_and_ignore_scale(
        counts in proptest::collection::vec(1usize..200, 2..8),
        p in 0.0f64..4.0,
        scale in 1usize..20,
        rot in 0usize..8,
    ) {
        let w = compute_class_weights(&counts, p).unwrap().weights;
        prop_assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
        let min_count = *counts.iter().min().unwrap();
        for (c, wk) in counts.iter().zip(&w) {
            if *c == min_count {
                prop_assert_eq!(*wk, 1.0);
            }
        }
        let mut rotated = counts.clone();
        rotated.rotate_left(rot % counts.len());
        let mut expect = w.clone();
        expect.rotate_left(rot % counts.len());
        prop_assert_eq!(compute_class_weights(&rotated, p).unwrap().weights, expect);
        let scaled: Vec<usize> = counts.iter().map(|c| c * scale).collect();
        let ws = compute_class_weights(&scaled, p).unwrap().weights;
        for (a, b) in ws.iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }
    }
}

#[test]
fn zero_exponent_makes_the_weighted_svm_plain() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let x = Tensor::randn(&[40, 5], 1.0, &mut rng);
    let y: Vec<usize> = (0..40).map(|i| usize::from(i % 5 == 0) + usize::from(i % 7 == 0)).collect();
    let counts = depthseed::eval::class_counts(&y, 3);
    let uniform = compute_class_weights(&counts, 0.0).unwrap();
    assert!(uniform.weights.iter().all(|&w| w == 1.0));
    let c = SvmConfig {
        c: 1.0,
        epochs: 20,
        seed: 30,
    };
    let plain = train_svm(&x, &y, None, &c).unwrap();
    let weighted = train_svm(&x, &y, Some(&uniform), &c).unwrap();
    assert_eq!(plain.predict(&x).unwrap(), weighted.predict(&x).unwrap());
}
