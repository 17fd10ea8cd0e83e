//! Compares analytic gradients with double-precision central differences,
//! first for a hand-built graph and then for every preset at small widths.
//!
//!     cargo run --example gradient_check

use depthseed::autograd::{grad_check, GradCheckConfig};
use depthseed::models::{build_preset, ArchPreset, InitScheme, ModelLoss, PresetConfig};
use depthseed::{dual_fn, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> depthseed::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = GradCheckConfig::default();

    // conv → relu → spp → linear → softmax loss
    let inputs = [
        Tensor::randn(&[2, 2, 9, 9], 1.0, &mut rng),
        Tensor::randn(&[3, 2, 3, 3], 0.5, &mut rng),
        Tensor::randn(&[3], 0.1, &mut rng),
        Tensor::randn(&[4, 3 * 14], 0.3, &mut rng),
        Tensor::randn(&[4], 0.1, &mut rng),
    ];
    let f = dual_fn!(|g, v| {
        let h = g.conv2d(v[0], v[1], v[2], 1, 1)?;
        let h = g.relu(h)?;
        let h = g.spp(h, &[1, 2, 3])?;
        let logits = g.linear(h, v[3], v[4])?;
        g.softmax_cross_entropy(logits, &[1, 3])
    });
    let r = grad_check(&inputs, &f, &cfg)?;
    println!("hand-built graph   max rel err {:.2e} over {} coords ({} kinks skipped)", r.max_rel_error, r.checked, r.skipped_kinks);

    for preset in ArchPreset::ALL {
        let mut pc = PresetConfig::defaults(preset, 3);
        pc.init = InitScheme::He;
        pc.conv_widths = vec![3; pc.conv_widths.len()];
        pc.fc_width = 5;
        pc.input_size = match preset {
            ArchPreset::AlexLike => 67,
            ArchPreset::Wsp => 35,
            ArchPreset::Dcnn => 24,
            ArchPreset::FusionHead => 10,
        };
        let model = build_preset(preset, &pc, 1)?;
        let shape = match preset {
            ArchPreset::FusionHead => vec![2, pc.input_size],
            _ => vec![2, 3, pc.input_size, pc.input_size],
        };
        let loss = ModelLoss {
            model: &model,
            labels: vec![0, 2],
        };
        let r = grad_check(&loss.inputs(&Tensor::randn(&shape, 1.0, &mut rng)), &loss, &cfg)?;
        println!(
            "{:<18} max rel err {:.2e} over {} coords  {}",
            preset.name(),
            r.max_rel_error,
            r.checked,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
