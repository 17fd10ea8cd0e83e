//! Trains a small depth DCNN, then profiles how often each conv1 filter fires
//! and writes the conv1 filters as a PPM mosaic.
//!
//!     cargo run --release --example filter_diagnostics -- [out_dir]

use std::path::PathBuf;

use depthseed::data::{render_split, save_rgb, SynthConfig};
use depthseed::diagnostics::{activation_ratio, export_filter_grid, profile_report, sort_profile, SortKey};
use depthseed::models::{build_preset, ArchPreset, InitScheme, PresetConfig};
use depthseed::training::{train, FreezePlan, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "filter_diagnostics".into()));
    std::fs::create_dir_all(&out)?;
    let (_, hha) = render_split(8, 20, 0, 1, &SynthConfig::default())?;

    let mut pc = PresetConfig::defaults(ArchPreset::Dcnn, 8);
    pc.input_size = 64;
    pc.conv_widths = vec![16, 32, 32, 32];
    pc.fc_width = 64;
    pc.init = InitScheme::He;
    let model = build_preset(ArchPreset::Dcnn, &pc, 1)?;
    let mut cfg = TrainConfig::new(1);
    cfg.epochs = 4;
    cfg.batch_size = 16;
    let (model, _) = train(model.clone(), &hha, None, &cfg, &FreezePlan::train_all(&model))?;

    let profiles = ["conv1", "conv2"]
        .iter()
        .map(|layer| activation_ratio(&model, layer, &hha, 32))
        .collect::<depthseed::Result<Vec<_>>>()?;
    let conv1 = &profiles[0];
    let order = sort_profile(conv1, SortKey::Ratio);
    println!("conv1 filters by activation ratio:");
    for &f in &order {
        println!("  filter {f:>2}  ratio {:.3}  mean {:.3}", conv1.ratios[f], conv1.means[f]);
    }
    let dead = conv1.ratios.iter().filter(|&&r| r == 0.0).count();
    println!("{dead} never-firing filters");

    profile_report(&profiles, out.join("profile.csv"))?;
    save_rgb(&export_filter_grid(&model, "conv1")?, out.join("filters_conv1.ppm"))?;
    println!("wrote {}", out.display());
    Ok(())
}
