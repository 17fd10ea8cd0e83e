//! Synthetic generator, HHA encoding and manifest-driven loading.

use depthseed::data::{
    encode_hha, generate_synthetic_scene, load_manifest, load_split, write_synthetic_dataset, DepthEncoding, DepthMap,
    Intrinsics, Layout, Modality, Split, SynthConfig, DEFAULT_GRAVITY,
};
use proptest::prelude::*;

fn valid_depths(d: &DepthMap) -> Vec<f64> {
    d.values.iter().filter(|&&v| v > 0.0).map(|&v| v as f64).collect()
}

fn variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
}

#[test]
fn flat_wall_varies_less_in_depth_than_staircase() {
    let cfg = SynthConfig::default();
    let wall = Layout::ALL.iter().position(|&l| l == Layout::FlatWall).unwrap();
    let stairs = Layout::ALL.iter().position(|&l| l == Layout::Staircase).unwrap();
    let mut wins = 0;
    let (mut wall_total, mut stairs_total) = (0.0, 0.0);
    for seed in 0..100 {
        let a = variance(&valid_depths(&generate_synthetic_scene(wall, seed, &cfg).unwrap().depth));
        let b = variance(&valid_depths(&generate_synthetic_scene(stairs, seed, &cfg).unwrap().depth));
        wins += usize::from(a < b);
        wall_total += a;
        stairs_total += b;
    }
    assert!(wall_total < stairs_total, "mean variance {wall_total} vs {stairs_total}");
    assert!(wins >= 90, "flat wall had lower variance in only {wins}/100 seeds");
}

fn depth_histogram(d: &DepthMap) -> Vec<f64> {
    const BINS: usize = 16;
    const MAX_M: f64 = 8.0;
    let vals = valid_depths(d);
    let mut h = [0.0; BINS];
    for v in &vals {
        h[((v / MAX_M * BINS as f64) as usize).min(BINS - 1)] += 1.0;
    }
    h.iter().map(|c| c / vals.len() as f64).collect()
}

#[test]
fn depth_histograms_separate_categories_above_chance() {
    let cfg = SynthConfig::default();
    let k = Layout::ALL.len();
    let items: Vec<(usize, Vec<f64>)> = (0..k)
        .flat_map(|c| (0..50).map(move |s| (c, s)))
        .map(|(c, s)| (c, depth_histogram(&generate_synthetic_scene(c, s, &cfg).unwrap().depth)))
        .collect();
    // leave-one-out nearest neighbour under L1
    let correct = items
        .iter()
        .enumerate()
        .filter(|(i, (label, h))| {
            let nearest = items
                .iter()
                .enumerate()
                .filter(|(j, _)| j != i)
                .min_by(|a, b| {
                    let da: f64 = a.1 .1.iter().zip(h).map(|(x, y)| (x - y).abs()).sum();
                    let db: f64 = b.1 .1.iter().zip(h).map(|(x, y)| (x - y).abs()).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            nearest.1 .0 == *label
        })
        .count();
    let acc = correct as f64 / items.len() as f64;
    assert!(acc > 1.0 / k as f64, "1-NN accuracy {acc}");
}

fn analytic_angle(normal: [f64; 3]) -> f64 {
    // angle to "up", the opposite of gravity
    let up = [-DEFAULT_GRAVITY[0], -DEFAULT_GRAVITY[1], -DEFAULT_GRAVITY[2]];
    (normal[0] * up[0] + normal[1] * up[1] + normal[2] * up[2]).acos().to_degrees()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hha_angle_matches_plane_normal(yaw in -0.8f64..0.8, pitch in -1.2f64..1.2, dist in 1.0f64..4.0) {
        // unit normal facing the camera (negative z), tilted by yaw and pitch
        let n = [yaw.sin() * pitch.cos(), pitch.sin(), -yaw.cos() * pitch.cos()];
        let size = 24;
        let k = Intrinsics::default_for(size, size);
        let values: Vec<f32> = (0..size * size)
            .map(|i| {
                let (r, c) = ((i / size) as f64, (i % size) as f64);
                let ray = [(c - k.cx as f64) / k.focal as f64, (k.cy as f64 - r) / k.focal as f64, 1.0];
                let denom = n[0] * ray[0] + n[1] * ray[1] + n[2] * ray[2];
                // plane n·X = -dist; rays that miss or run away stay invalid
                let z = -dist / denom;
                if denom < 0.0 && z < 50.0 { z as f32 } else { 0.0 }
            })
            .collect();
        prop_assume!(values.iter().filter(|&&v| v > 0.0).count() > size * size / 2);
        let depth = DepthMap::new(size, size, values, k).unwrap();
        let hha = encode_hha(&depth, DEFAULT_GRAVITY).unwrap();
        let want = analytic_angle(n);
        let plane = size * size;
        for r in 1..size - 1 {
            for c in 1..size - 1 {
                let around = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1), (r, c)];
                if around.iter().any(|&(y, x)| !depth.is_valid(y, x)) {
                    continue;
                }
                let got = hha.data()[2 * plane + r * size + c] as f64 / 255.0 * 180.0;
                prop_assert!((got - want).abs() < 1.0, "pixel ({r},{c}): {got}° vs {want}°");
            }
        }
    }
}

#[test]
fn written_dataset_loads_back_as_hha() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        size: 32,
        ..SynthConfig::default()
    };
    write_synthetic_dataset(dir.path(), 3, 4, 2, 11, &cfg).unwrap();
    let m = load_manifest(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(m.num_classes, 3);
    assert_eq!(m.class_counts(Split::Train), [4, 4, 4]);
    assert_eq!(m.class_counts(Split::Test), [2, 2, 2]);
    let hha = load_split(&m, Split::Test, Modality::Depth, DepthEncoding::default()).unwrap();
    assert_eq!(hha.images.len(), 6);
    assert_eq!(hha.images[0].shape(), [3, 32, 32]);
    assert!(hha.images.iter().all(|t| t.data().iter().all(|v| (-1.0..=1.0).contains(v))));
}

#[test]
fn same_seed_writes_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        size: 24,
        ..SynthConfig::default()
    };
    write_synthetic_dataset(a.path(), 2, 2, 1, 3, &cfg).unwrap();
    write_synthetic_dataset(b.path(), 2, 2, 1, 3, &cfg).unwrap();
    for entry in walk(a.path()) {
        let rel = entry.strip_prefix(a.path()).unwrap();
        assert_eq!(std::fs::read(&entry).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
    }
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
