//! Encodes a tilted floor plane and a synthetic staircase as HHA and
//! summarises each channel.
//!
//!     cargo run --example hha_encoding

use depthseed::data::{encode_hha, generate_synthetic_scene, DepthMap, Intrinsics, Layout, SynthConfig, DEFAULT_GRAVITY};
use depthseed::Tensor;

fn channel_summary(name: &str, hha: &Tensor) {
    let plane = hha.shape()[1] * hha.shape()[2];
    for (c, label) in ["disparity", "height cm", "angle"].iter().enumerate() {
        let ch = &hha.data()[c * plane..(c + 1) * plane];
        let (lo, hi) = ch.iter().fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let mean = ch.iter().sum::<f32>() / plane as f32;
        println!("{name:<10} {label:<10} min {lo:>7.1}  mean {mean:>7.1}  max {hi:>7.1}");
    }
}

fn main() -> depthseed::Result<()> {
    // a floor 1.2 m below the camera, seen from above the horizon down
    let size = 48;
    let k = Intrinsics::default_for(size, size);
    let values = (0..size * size)
        .map(|i| {
            let below = (i / size) as f32 - k.cy;
            if below > 1.0 { 1.2 * k.focal / below } else { 0.0 }
        })
        .collect();
    let floor = DepthMap::new(size, size, values, k)?;
    let hha = encode_hha(&floor, DEFAULT_GRAVITY)?;
    channel_summary("floor", &hha);
    println!("floor normals point up, so the angle channel sits near 0\n");

    let stairs = Layout::ALL.iter().position(|&l| l == Layout::Staircase).expect("built-in layout");
    let scene = generate_synthetic_scene(stairs, 3, &SynthConfig::default())?;
    channel_summary("staircase", &encode_hha(&scene.depth, DEFAULT_GRAVITY)?);
    Ok(())
}
