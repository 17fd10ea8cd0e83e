//! Renders one scene per layout and writes the RGB image, raw depth and HHA
//! channels as viewable PPM/PGM files.
//!
//!     cargo run --example synth_scenes -- [out_dir] [seed]

use std::path::PathBuf;

use depthseed::data::{encode_hha, generate_synthetic_scene, save_depth, save_rgb, Layout, SynthConfig, DEFAULT_GRAVITY};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_scenes".into()));
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    std::fs::create_dir_all(&out)?;

    let cfg = SynthConfig::default();
    println!("{:<16} {:>8} {:>8} {:>8} {:>6}", "layout", "min m", "max m", "mean m", "holes");
    for (category, layout) in Layout::ALL.iter().enumerate() {
        let scene = generate_synthetic_scene(category, seed, &cfg)?;
        let valid: Vec<f32> = scene.depth.values.iter().copied().filter(|&v| v > 0.0).collect();
        let mean = valid.iter().sum::<f32>() / valid.len() as f32;
        let (lo, hi) = valid.iter().fold((f32::MAX, 0.0f32), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        println!(
            "{:<16} {lo:>8.2} {hi:>8.2} {mean:>8.2} {:>6}",
            layout.name(),
            scene.depth.values.len() - valid.len()
        );
        save_rgb(&scene.rgb, out.join(format!("{}_rgb.ppm", layout.name())))?;
        save_depth(&scene.depth, out.join(format!("{}_depth.pgm", layout.name())))?;
        // HHA channels are already in [0, 255]; view them as an RGB image
        let hha = encode_hha(&scene.depth, DEFAULT_GRAVITY)?;
        save_rgb(&hha, out.join(format!("{}_hha.ppm", layout.name())))?;
    }
    println!("wrote {} layouts to {}", Layout::ALL.len(), out.display());
    Ok(())
}
