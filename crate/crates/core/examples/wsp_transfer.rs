//! Weakly supervised patch pretraining: train the three-conv WSP network on
//! a grid of patches that inherit their image's label, move its conv weights
//! into a DCNN and fine-tune. A DCNN trained from scratch is the baseline.
//!
//!     cargo run --release --example wsp_transfer -- [seed] [epochs]

use depthseed::data::{render_split, SynthConfig};
use depthseed::models::{build_preset, transfer_conv_weights, ArchPreset, InitScheme, ModelGraph, PresetConfig};
use depthseed::training::{pretrain_wsp, train, FreezePlan, TrainConfig, TrainLog};

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
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let synth = SynthConfig::default();
    let (_, train_hha) = render_split(8, 40, 0, seed, &synth)?;
    let (_, test_hha) = render_split(8, 20, 40, seed, &synth)?;
    let mut cfg = TrainConfig::new(seed);
    cfg.epochs = epochs;
    cfg.batch_size = 16;

    let mut wc = PresetConfig::defaults(ArchPreset::Wsp, 8);
    wc.conv_widths = vec![16, 32, 32];
    wc.init = InitScheme::He;
    let mut wsp_cfg = cfg.clone();
    wsp_cfg.epochs = 3;
    // 4×4 grid of 35×35 patches per image
    let (wsp, wsp_log) = pretrain_wsp(build_preset(ArchPreset::Wsp, &wc, seed)?, &train_hha, Some(&test_hha), 4, 35, &wsp_cfg)?;
    println!("wsp patch accuracy {:.4}", test_acc(&wsp_log));

    let fresh = dcnn(seed)?;
    let plan = FreezePlan::train_all(&fresh);
    let (_, scratch_log) = train(fresh.clone(), &train_hha, Some(&test_hha), &cfg, &plan)?;
    let (_, wsp_dcnn_log) = train(transfer_conv_weights(&wsp, &fresh)?, &train_hha, Some(&test_hha), &cfg, &plan)?;

    println!("epoch  scratch  wsp→dcnn");
    for (a, b) in scratch_log.epochs.iter().zip(&wsp_dcnn_log.epochs) {
        println!("{:>5}  {:.4}   {:.4}", a.epoch, a.test_acc.unwrap_or(f64::NAN), b.test_acc.unwrap_or(f64::NAN));
    }
    Ok(())
}
