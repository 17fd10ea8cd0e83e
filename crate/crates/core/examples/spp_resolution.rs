//! Spatial pyramid pooling makes the classifier input length independent
//! of image size: the same DCNN accepts inputs of several resolutions.
//!
//!     cargo run --example spp_resolution

use depthseed::autograd::kernels::spp_level_geometry;
use depthseed::models::{build_preset, ArchPreset, InitScheme, PresetConfig};
use depthseed::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> depthseed::Result<()> {
    for bins in [1, 2, 3] {
        let (window, stride) = spp_level_geometry(29, bins)?;
        println!("29×29 map, {bins}×{bins} bins: window {window}, stride {stride}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pc = PresetConfig::defaults(ArchPreset::Dcnn, 10);
    pc.init = InitScheme::He;
    pc.conv_widths = vec![8, 16, 16, 16];
    pc.fc_width = 32;
    for size in [48, 64, 96, 128] {
        pc.input_size = size;
        let model = build_preset(ArchPreset::Dcnn, &pc, 0)?;
        let batch = Tensor::randn(&[1, 3, size, size], 1.0, &mut rng);
        let conv4 = model.shape_after("conv4")?;
        let spp = model.activations(&batch, Some("spp"))?;
        println!("input {size:>3}: conv4 {conv4:?} → spp {:?}", spp.shape());
    }
    Ok(())
}
