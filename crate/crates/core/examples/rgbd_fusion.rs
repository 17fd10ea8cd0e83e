//! Trains an RGB and a depth DCNN, joins their relu7 features through a
//! fusion layer and fine-tunes the whole two-stream network end to end.
//!
//!     cargo run --release --example rgbd_fusion -- [seed]

use depthseed::data::{render_split, SynthConfig};
use depthseed::fusion::{build_rgbd_model, train_rgbd, PairedSet};
use depthseed::models::{build_preset, ArchPreset, InitScheme, ModelGraph, PresetConfig};
use depthseed::training::{train, FreezePlan, TrainConfig, TrainLog};

fn dcnn(seed: u64) -> depthseed::Result<ModelGraph> {
    let mut pc = PresetConfig::defaults(ArchPreset::Dcnn, 8);
    pc.input_size = 64;
    pc.conv_widths = vec![16, 32, 32, 32];
    pc.fc_width = 64;
    pc.init = InitScheme::He;
    build_preset(ArchPreset::Dcnn, &pc, seed)
}

fn test_acc(log: &TrainLog) -> f64 {
    log.last().and_then(|e| e.test_acc).unwrap_or(f64::NAN)
}

fn main() -> depthseed::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let synth = SynthConfig::default();
    let (train_rgb, train_hha) = render_split(8, 40, 0, seed, &synth)?;
    let (test_rgb, test_hha) = render_split(8, 20, 40, seed, &synth)?;
    let mut cfg = TrainConfig::new(seed);
    cfg.batch_size = 16;

    let plan = FreezePlan::train_all(&dcnn(seed)?);
    let (rgb, rgb_log) = train(dcnn(seed + 100)?, &train_rgb, Some(&test_rgb), &cfg, &plan)?;
    let (depth, depth_log) = train(dcnn(seed)?, &train_hha, Some(&test_hha), &cfg, &plan)?;

    let fused = build_rgbd_model(&rgb, &depth, "relu7", "relu7", 64, 8, seed)?;
    println!("two-stream parameters: {}", fused.param_count());
    let mut fuse_cfg = cfg.clone();
    fuse_cfg.epochs = 4;
    fuse_cfg.lr = 0.001;
    let train_pairs = PairedSet::new(train_rgb, train_hha)?;
    let test_pairs = PairedSet::new(test_rgb, test_hha)?;
    let (_, fused_log) = train_rgbd(fused, &train_pairs, Some(&test_pairs), &fuse_cfg, None)?;

    println!("rgb   {:.4}", test_acc(&rgb_log));
    println!("depth {:.4}", test_acc(&depth_log));
    println!("rgb-d {:.4}", test_acc(&fused_log));
    Ok(())
}
