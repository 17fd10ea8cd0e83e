//! Saves a model as a tensor-container checkpoint plus architecture file,
//! loads it back and confirms the weights and predictions are identical.
//!
//!     cargo run --example checkpoints

use depthseed::data::{decode_checkpoint, encode_checkpoint};
use depthseed::models::{arch_path, build_preset, load_model, save_model, ArchPreset, PresetConfig};
use depthseed::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut pc = PresetConfig::defaults(ArchPreset::Wsp, 5);
    pc.conv_widths = vec![8, 16, 16];
    pc.fc_width = 32;
    let model = build_preset(ArchPreset::Wsp, &pc, 7)?;

    let bytes = encode_checkpoint(model.params())?;
    let back = decode_checkpoint(&bytes)?;
    println!("{} tensors, {} parameters, {} bytes", back.len(), model.param_count(), bytes.len());

    let dir = std::env::temp_dir().join("depthseed_checkpoint_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("wsp.dtns");
    save_model(&model, &path)?;
    println!("architecture file:\n{}", std::fs::read_to_string(arch_path(&path))?);

    let loaded = load_model(&path)?;
    let same = model.params().iter().all(|(k, v)| loaded.param(k).is_some_and(|w| w.bitwise_eq(v)));
    let batch = Tensor::randn(&[4, 3, 35, 35], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    println!("weights identical: {same}");
    println!("predictions identical: {}", model.predict(&batch)? == loaded.predict(&batch)?);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
