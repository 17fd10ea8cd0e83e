//! Linear SVMs on imbalanced data with category weights (min_i N_i / N_k)^p.
//! Sweeps the exponent and reports mean class accuracy on a balanced test
//! set.
//!
//!     cargo run --release --example weighted_svm -- [ratio]

use depthseed::eval::{class_counts, compute_class_weights, mean_class_accuracy, per_class_accuracy, train_svm, SvmConfig};
use depthseed::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(counts: &[usize], means: &[Vec<f32>], rng: &mut ChaCha8Rng) -> depthseed::Result<(Tensor, Vec<usize>)> {
    let d = means[0].len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let noise = Tensor::randn(&[d], 0.8, rng);
            x.extend(means[c].iter().zip(noise.data()).map(|(m, e)| m + e));
            y.push(c);
        }
    }
    Ok((Tensor::new(vec![y.len(), d], x)?, y))
}

fn main() -> depthseed::Result<()> {
    let ratio: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    println!("weights for counts [10, 40], p = 2: {:?}", compute_class_weights(&[10, 40], 2.0)?.weights);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let means: Vec<Vec<f32>> = (0..3).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let (xtr, ytr) = blobs(&[40 * ratio, 40, 40], &means, &mut rng)?;
    let (xte, yte) = blobs(&[200, 200, 200], &means, &mut rng)?;
    let counts = class_counts(&ytr, 3);
    println!("train counts {counts:?}");

    let cfg = SvmConfig {
        c: 1.0,
        epochs: 50,
        seed: 1,
    };
    let plain = train_svm(&xtr, &ytr, None, &cfg)?.predict(&xte)?;
    println!("unweighted  mean class acc {:.4}  per class {:.2?}", mean_class_accuracy(&plain, &yte, 3)?, per_class_accuracy(&plain, &yte, 3)?);
    for p in [0.5, 1.0, 2.0] {
        let w = compute_class_weights(&counts, p)?;
        let pred = train_svm(&xtr, &ytr, Some(&w), &cfg)?.predict(&xte)?;
        println!(
            "p = {p:<4}    mean class acc {:.4}  per class {:.2?}",
            mean_class_accuracy(&pred, &yte, 3)?,
            per_class_accuracy(&pred, &yte, 3)?
        );
    }
    Ok(())
}
