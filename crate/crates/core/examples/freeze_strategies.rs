//! Fine-tuning strategies on an AlexNet-style network: train everything,
//! freeze below a split (ft-top), train only up to a split (ft-bottom), or
//! drop everything above a split and retrain the rest (ft-keep).
//!
//!     cargo run --release --example freeze_strategies -- [split]

use depthseed::data::{render_split, SynthConfig};
use depthseed::models::{build_preset, ArchPreset, InitScheme, PresetConfig};
use depthseed::training::{apply_strategy, train, Strategy, TrainConfig};

fn main() -> depthseed::Result<()> {
    let split = std::env::args().nth(1).unwrap_or_else(|| "conv3".into());
    let synth = SynthConfig {
        size: 67,
        ..SynthConfig::default()
    };
    let (_, train_hha) = render_split(4, 20, 0, 1, &synth)?;
    let (_, test_hha) = render_split(4, 10, 20, 1, &synth)?;

    let mut pc = PresetConfig::defaults(ArchPreset::AlexLike, 4);
    pc.input_size = 67;
    pc.conv_widths = vec![16, 24, 32, 32, 24];
    pc.fc_width = 64;
    pc.init = InitScheme::He;
    let source = build_preset(ArchPreset::AlexLike, &pc, 1)?;
    let mut cfg = TrainConfig::new(1);
    cfg.epochs = 6;
    cfg.batch_size = 8;

    for strategy in [Strategy::Full, Strategy::FtTop, Strategy::FtBottom, Strategy::FtKeep] {
        let (start, plan) = apply_strategy(strategy, &source, &split, 4)?;
        let (trained, log) = train(start.clone(), &train_hha, Some(&test_hha), &cfg, &plan)?;
        let changed: Vec<&str> = start
            .params()
            .iter()
            .filter(|(k, v)| trained.param(k) != Some(v))
            .filter_map(|(k, _)| k.strip_suffix(".weight"))
            .collect();
        println!(
            "{:<9} layers {:>2}  acc {:.4}  updated {changed:?}",
            strategy.name(),
            trained.layers().len(),
            log.last().and_then(|e| e.test_acc).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
