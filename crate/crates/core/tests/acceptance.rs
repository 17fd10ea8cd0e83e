//! One test per acceptance criterion. Each prints a single `PASS`/`FAIL`
//! line straight to stdout (bypassing the harness capture) before asserting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use depthseed::autograd::kernels::{spp_level_geometry, spp_output_len};
use depthseed::autograd::{grad_check, GradCheckConfig, GradCheckReport};
use depthseed::data::{
    decode_checkpoint, decode_pgm_depth, decode_ppm, decode_tensor, encode_checkpoint, encode_tensor, parse_manifest,
    render_split, ImageSet, SynthConfig,
};
use depthseed::diagnostics::{activation_ratio, sort_profile, SortKey};
use depthseed::eval::{compute_class_weights, mean_class_accuracy, train_svm, SvmConfig};
use depthseed::fusion::{build_rgbd_model, train_rgbd, PairedSet};
use depthseed::models::{
    build_preset, transfer_conv_weights, ArchPreset, InitConfig, InitScheme, LayerSpec, ModelGraph, ModelLoss,
    PresetConfig,
};
use depthseed::training::{apply_strategy, pretrain_wsp, train, FreezePlan, Strategy, TrainConfig};
use depthseed::{dual_fn, Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {criterion:>2} [{verdict}] {name}: {detail}\n");
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

// ---------------------------------------------------------------- criterion 1

fn small_preset(preset: ArchPreset) -> (PresetConfig, Vec<usize>) {
    let mut cfg = PresetConfig::defaults(preset, 3);
    cfg.init = InitScheme::He;
    cfg.fc_width = 5;
    let widths = cfg.conv_widths.len();
    cfg.conv_widths = vec![3; widths];
    cfg.input_size = match preset {
        ArchPreset::AlexLike => 67,
        ArchPreset::Wsp => 35,
        ArchPreset::Dcnn => 24,
        ArchPreset::FusionHead => 10,
    };
    let batch = match preset {
        ArchPreset::FusionHead => vec![2, cfg.input_size],
        _ => vec![2, 3, cfg.input_size, cfg.input_size],
    };
    (cfg, batch)
}

fn worst(reports: &[GradCheckReport]) -> f64 {
    reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
}

#[test]
fn criterion_01_gradient_suite() {
    let started = Instant::now();
    let seeds = 0..20u64;
    let cfg = |seed| GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    let mut failures = Vec::new();
    let mut layer_worst = BTreeMap::new();

    let mut check = |name: &str, reports: Vec<GradCheckReport>| {
        let err = worst(&reports);
        if !reports.iter().all(GradCheckReport::passed) {
            failures.push(format!("{name} ({err:.2e})"));
        }
        layer_worst.insert(name.to_string(), err);
    };

    let per_seed = |f: &dyn Fn(u64) -> GradCheckReport| seeds.clone().map(f).collect::<Vec<_>>();

    check("conv", per_seed(&|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let inputs = [randn(&[2, 2, 6, 6], &mut rng), randn(&[3, 2, 3, 3], &mut rng), randn(&[3], &mut rng)];
        let f = dual_fn!(|g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
            let c: Vec<f32> = (0..g.value(y).numel()).map(|i| ((i * 7) % 5) as f32 - 2.0).collect();
            g.weighted_sum(y, &c)
        });
        grad_check(&inputs, &f, &cfg(s)).unwrap()
    }));
    check("maxpool", per_seed(&|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let f = dual_fn!(|g, v| {
            let y = g.maxpool2d(v[0], 2, 2)?;
            let c: Vec<f32> = (0..g.value(y).numel()).map(|i| 1.0 + (i % 3) as f32).collect();
            g.weighted_sum(y, &c)
        });
        grad_check(&[randn(&[2, 2, 6, 6], &mut rng)], &f, &cfg(s)).unwrap()
    }));
    check("relu", per_seed(&|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let f = dual_fn!(|g, v| {
            let y = g.relu(v[0])?;
            let c: Vec<f32> = (0..g.value(y).numel()).map(|i| 0.5 + (i % 4) as f32).collect();
            g.weighted_sum(y, &c)
        });
        grad_check(&[randn(&[3, 10], &mut rng)], &f, &cfg(s)).unwrap()
    }));
    check("spp", per_seed(&|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let f = dual_fn!(|g, v| {
            let y = g.spp(v[0], &[1, 2, 3])?;
            let c: Vec<f32> = (0..g.value(y).numel()).map(|i| 1.0 + (i % 5) as f32).collect();
            g.weighted_sum(y, &c)
        });
        grad_check(&[randn(&[2, 2, 7, 7], &mut rng)], &f, &cfg(s)).unwrap()
    }));
    check("softmax-loss", per_seed(&|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let f = dual_fn!(|g, v| g.softmax_cross_entropy(v[0], &[0, 3, 1]));
        grad_check(&[randn(&[3, 4], &mut rng)], &f, &cfg(s)).unwrap()
    }));
    check("concat", per_seed(&|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let f = dual_fn!(|g, v| {
            let y = g.concat(&[v[0], v[1]])?;
            g.softmax_cross_entropy(y, &[1, 4])
        });
        grad_check(&[randn(&[2, 2], &mut rng), randn(&[2, 3], &mut rng)], &f, &cfg(s)).unwrap()
    }));
    // purely linear graph: stricter tolerance
    check("linear", per_seed(&|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let inputs = [randn(&[3, 5], &mut rng), randn(&[4, 5], &mut rng), randn(&[4], &mut rng)];
        let f = dual_fn!(|g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            g.weighted_sum(y, &[1.0, -2.0, 0.5, 3.0, 1.5, -1.0, 2.0, 0.25, -0.5, 1.0, 2.5, -3.0])
        });
        let strict = GradCheckConfig {
            tol: 1e-4,
            ..cfg(s)
        };
        grad_check(&inputs, &f, &strict).unwrap()
    }));
    for preset in ArchPreset::ALL {
        check(preset.name(), per_seed(&|s| {
            let (pc, shape) = small_preset(preset);
            let model = build_preset(preset, &pc, s).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
            let loss = ModelLoss {
                model: &model,
                labels: vec![(s % 3) as usize, 2],
            };
            grad_check(&loss.inputs(&randn(&shape, &mut rng)), &loss, &cfg(s)).unwrap()
        }));
    }

    let elapsed = started.elapsed();
    let in_time = elapsed < Duration::from_secs(120);
    let pass = failures.is_empty() && in_time;
    let summary: Vec<String> = layer_worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    report(
        1,
        "gradient suite",
        pass,
        &format!("20 seeds, worst rel err: {}; {:.1}s; failures: {failures:?}", summary.join(", "), elapsed.as_secs_f64()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_spp_anchor() {
    let geometry: Vec<(usize, usize)> = [1, 2, 3].iter().map(|&n| spp_level_geometry(29, n).unwrap()).collect();
    let anchor = geometry == [(29, 29), (15, 14), (10, 9)];
    let mut bad_sizes = Vec::new();
    let mut g = depthseed::autograd::Graph::<f32>::new();
    for a in 3..=64 {
        let x = g.leaf(Tensor::from_fn(&[1, 2, a, a], |i| (i % 11) as f32)).unwrap();
        let y = g.spp(x, &[1, 2, 3]).unwrap();
        if g.value(y).shape() != [1, 14 * 2] || spp_output_len(2, &[1, 2, 3]) != 28 {
            bad_sizes.push(a);
        }
    }
    let pass = anchor && bad_sizes.is_empty();
    report(
        2,
        "SPP anchor",
        pass,
        &format!("a=29 windows/strides {geometry:?}; length 14·C for a in 3..=64, mismatches {bad_sizes:?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_03_transfer_equivalence() {
    let wsp = build_preset(ArchPreset::Wsp, &PresetConfig::defaults(ArchPreset::Wsp, 8), 1).unwrap();
    let mut dc = PresetConfig::defaults(ArchPreset::Dcnn, 8);
    dc.input_size = 35;
    let dcnn = build_preset(ArchPreset::Dcnn, &dc, 2).unwrap();
    let moved = transfer_conv_weights(&wsp, &dcnn).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = randn(&[100, 3, 35, 35], &mut rng);
    let a = wsp.activations(&batch, Some("conv3")).unwrap();
    let b = moved.activations(&batch, Some("conv3")).unwrap();
    let identical = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    let pass = identical && a.shape() == b.shape();
    report(
        3,
        "transfer equivalence",
        pass,
        &format!("conv1..conv3 on 100 inputs of 35×35, output {:?}, bitwise identical: {identical}", a.shape()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

fn tiny_set(n_per_class: usize, size: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..3 * n_per_class {
        images.push(Tensor::randn(&[3, size, size], 1.0, &mut rng));
        labels.push(i % 3);
    }
    ImageSet::new(images, labels, 3).unwrap()
}

#[test]
fn criterion_04_freeze_correctness() {
    let mut pc = PresetConfig::defaults(ArchPreset::AlexLike, 3);
    pc.conv_widths = vec![4; 5];
    pc.fc_width = 8;
    pc.input_size = 67;
    pc.init = InitScheme::He;
    let alex = build_preset(ArchPreset::AlexLike, &pc, 4).unwrap();
    let data = tiny_set(4, 67, 5);
    let mut cfg = TrainConfig::new(6);
    cfg.epochs = 3;
    cfg.batch_size = 4;
    let mut details = Vec::new();
    let mut pass = true;
    for (strategy, split) in [(Strategy::FtTop, "fc6"), (Strategy::FtBottom, "conv3"), (Strategy::FtKeep, "conv3")] {
        let (start, plan) = apply_strategy(strategy, &alex, split, 3).unwrap();
        let (trained, _) = train(start.clone(), &data, None, &cfg, &plan).unwrap();
        let frozen = plan.frozen_layers().into_iter().map(str::to_string).collect::<Vec<_>>();
        let frozen_same = start
            .params()
            .iter()
            .filter(|(k, _)| !plan.trains_param(k))
            .all(|(k, v)| trained.param(k).unwrap().data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let fc8_changed = trained.param("fc8.weight") != start.param("fc8.weight");
        let ok = frozen_same && fc8_changed;
        pass &= ok;
        details.push(format!(
            "{} split {split}: frozen {frozen:?} unchanged={frozen_same}, fc8 changed={fc8_changed}",
            strategy.name()
        ));
    }
    report(4, "freeze correctness", pass, &details.join("; "));
    assert!(pass);
}

// ----------------------------------------------------------- criteria 5 and 6

struct SeedOutcome {
    scratch: f64,
    wsp: f64,
    rgb: f64,
    fused: f64,
}

struct TrendRuns {
    outcomes: Vec<SeedOutcome>,
    /// Time of the scratch and WSP runs only (criterion 5's budget).
    depth_time: Duration,
}

fn trend_dcnn(seed: u64) -> ModelGraph {
    let mut pc = PresetConfig::defaults(ArchPreset::Dcnn, 8);
    pc.input_size = 64;
    pc.conv_widths = vec![16, 32, 32, 32];
    pc.fc_width = 64;
    pc.init = InitScheme::He;
    build_preset(ArchPreset::Dcnn, &pc, seed).unwrap()
}

fn final_acc(log: &depthseed::training::TrainLog) -> f64 {
    log.last().and_then(|r| r.test_acc).expect("test split evaluated")
}

/// 8 classes, 40 train and 20 test scenes per class, three fixed seeds.
fn trend_runs() -> &'static TrendRuns {
    static RUNS: OnceLock<TrendRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let synth = SynthConfig::default();
        let mut outcomes = Vec::new();
        let mut depth_time = Duration::ZERO;
        for seed in 1..=3u64 {
            let (train_rgb, train_hha) = render_split(8, 40, 0, seed, &synth).unwrap();
            let (test_rgb, test_hha) = render_split(8, 20, 40, seed, &synth).unwrap();
            let mut cfg = TrainConfig::new(seed);
            cfg.epochs = 10;
            cfg.batch_size = 16;

            let t = Instant::now();
            let fresh = trend_dcnn(seed);
            let plan = FreezePlan::train_all(&fresh);
            let (_, scratch_log) = train(fresh.clone(), &train_hha, Some(&test_hha), &cfg, &plan).unwrap();

            let mut wc = PresetConfig::defaults(ArchPreset::Wsp, 8);
            wc.conv_widths = vec![16, 32, 32];
            wc.init = InitScheme::He;
            let mut wsp_cfg = cfg.clone();
            wsp_cfg.epochs = 3;
            let wsp = build_preset(ArchPreset::Wsp, &wc, seed).unwrap();
            let (wsp, _) = pretrain_wsp(wsp, &train_hha, None, 4, 35, &wsp_cfg).unwrap();
            let start = transfer_conv_weights(&wsp, &fresh).unwrap();
            let (depth, wsp_log) = train(start, &train_hha, Some(&test_hha), &cfg, &plan).unwrap();
            depth_time += t.elapsed();

            let (rgb, rgb_log) = train(trend_dcnn(seed + 100), &train_rgb, Some(&test_rgb), &cfg, &plan).unwrap();

            let rgbd = build_rgbd_model(&rgb, &depth, "relu7", "relu7", 64, 8, seed).unwrap();
            let mut fuse_cfg = cfg.clone();
            fuse_cfg.epochs = 4;
            fuse_cfg.lr = 0.001;
            let train_pairs = PairedSet::new(train_rgb, train_hha).unwrap();
            let test_pairs = PairedSet::new(test_rgb, test_hha).unwrap();
            let (_, fused_log) = train_rgbd(rgbd, &train_pairs, Some(&test_pairs), &fuse_cfg, None).unwrap();

            outcomes.push(SeedOutcome {
                scratch: final_acc(&scratch_log),
                wsp: final_acc(&wsp_log),
                rgb: final_acc(&rgb_log),
                fused: final_acc(&fused_log),
            });
        }
        TrendRuns { outcomes, depth_time }
    })
}

#[test]
fn criterion_05_wsp_beats_scratch() {
    let runs = trend_runs();
    let chance3 = 3.0 / 8.0;
    let wins = runs.outcomes.iter().filter(|o| o.wsp >= o.scratch).count();
    let above = runs.outcomes.iter().all(|o| o.wsp > chance3 && o.scratch > chance3);
    let in_time = runs.depth_time < Duration::from_secs(30 * 60);
    let pass = wins >= 2 && above && in_time;
    let per_seed: Vec<String> = runs
        .outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| format!("seed {}: wsp {:.4} vs scratch {:.4}", i + 1, o.wsp, o.scratch))
        .collect();
    report(
        5,
        "WSP beats scratch",
        pass,
        &format!(
            "{}; wsp ≥ scratch in {wins}/3, all > 0.375: {above}; {:.0}s",
            per_seed.join(", "),
            runs.depth_time.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_fusion_helps() {
    let runs = trend_runs();
    let mut strict = 0;
    let mut within = true;
    let mut per_seed = Vec::new();
    for (i, o) in runs.outcomes.iter().enumerate() {
        let best = o.rgb.max(o.wsp);
        within &= o.fused >= best - 0.02;
        if o.fused > best {
            strict += 1;
        }
        per_seed.push(format!("seed {}: rgbd {:.4} vs rgb {:.4} / depth {:.4}", i + 1, o.fused, o.rgb, o.wsp));
    }
    let pass = within && strict >= 2;
    report(
        6,
        "fusion helps",
        pass,
        &format!("{}; within 2 points every seed: {within}, strictly better in {strict}/3", per_seed.join(", ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 7

/// Two overlapping Gaussian blobs, class 0 ten times as frequent as class 1
/// in training; the test split is balanced.
fn imbalanced_features(seed: u64) -> (Tensor, Vec<usize>, Tensor, Vec<usize>) {
    let (k, d) = (2usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f32>> = (0..k).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let draw = |counts: &[usize], rng: &mut ChaCha8Rng| {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                let noise = Tensor::randn(&[d], 0.8, rng);
                x.extend(means[c].iter().zip(noise.data()).map(|(m, e)| m + e));
                y.push(c);
            }
        }
        (Tensor::new(vec![y.len(), d], x).unwrap(), y)
    };
    let (xtr, ytr) = draw(&[400, 40], &mut rng);
    let (xte, yte) = draw(&[200, 200], &mut rng);
    (xtr, ytr, xte, yte)
}

#[test]
fn criterion_07_weighted_svm_under_imbalance() {
    let formula = compute_class_weights(&[10, 40], 2.0).unwrap().weights;
    let formula_ok = formula == [1.0, 0.0625];
    let mut every = true;
    let mut per_seed = Vec::new();
    for seed in 1..=3u64 {
        let (xtr, ytr, xte, yte) = imbalanced_features(seed);
        let cfg = SvmConfig {
            c: 1.0,
            epochs: 50,
            seed,
        };
        let counts = depthseed::eval::class_counts(&ytr, 2);
        let weights = compute_class_weights(&counts, 2.0).unwrap();
        let plain = train_svm(&xtr, &ytr, None, &cfg).unwrap().predict(&xte).unwrap();
        let weighted = train_svm(&xtr, &ytr, Some(&weights), &cfg).unwrap().predict(&xte).unwrap();
        let svm = mean_class_accuracy(&plain, &yte, 2).unwrap();
        let wsvm = mean_class_accuracy(&weighted, &yte, 2).unwrap();
        // p = 1 exactly cancels a 10:1 ratio; shown for context only
        let linear_weights = compute_class_weights(&counts, 1.0).unwrap();
        let p1 = train_svm(&xtr, &ytr, Some(&linear_weights), &cfg).unwrap().predict(&xte).unwrap();
        let p1 = mean_class_accuracy(&p1, &yte, 2).unwrap();
        let recall = |pred: &[usize]| pred[200..].iter().filter(|&&p| p == 1).count() as f64 / 200.0;
        every &= wsvm >= svm;
        per_seed.push(format!(
            "seed {seed}: wsvm {wsvm:.4} vs svm {svm:.4} (minority recall {:.3} vs {:.3}; p=1 gives {p1:.4})",
            recall(&weighted),
            recall(&plain)
        ));
    }
    let pass = formula_ok && every;
    report(
        7,
        "weighted SVM under 10:1 imbalance",
        pass,
        &format!("{}; weights for counts [10,40], p=2: {formula:?}", per_seed.join(", ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 8

fn one_conv(weights: Tensor, bias: Tensor) -> ModelGraph {
    let [out, c, k, _] = *weights.shape() else { unreachable!() };
    let mut m = ModelGraph::new(
        vec![
            LayerSpec::conv("conv1", c, out, k, 2, 2),
            LayerSpec::relu("relu1"),
            LayerSpec::spp("spp", &[1]),
            LayerSpec::linear("fc8", out, 2),
            LayerSpec::loss(),
        ],
        vec![3, 64, 64],
        InitConfig::new(InitScheme::He, 0),
    )
    .unwrap();
    m.set_param("conv1.weight", weights).unwrap();
    m.set_param("conv1.bias", bias).unwrap();
    m
}

#[test]
fn criterion_08_diagnostics() {
    let synth = SynthConfig::default();
    let (_, train_hha) = render_split(8, 10, 0, 7, &synth).unwrap();
    let model = trend_dcnn(7);
    let mut cfg = TrainConfig::new(7);
    cfg.epochs = 2;
    cfg.batch_size = 16;
    let plan = FreezePlan::train_all(&model);
    let (model, _) = train(model, &train_hha, None, &cfg, &plan).unwrap();

    let profile = activation_ratio(&model, "conv1", &train_hha, 16).unwrap();
    let in_range = profile.ratios.iter().all(|r| (0.0..=1.0).contains(r));
    let order = sort_profile(&profile, SortKey::Ratio);
    let mut seen = order.clone();
    seen.sort_unstable();
    let permutation = seen == (0..profile.ratios.len()).collect::<Vec<_>>();
    let stable = order.windows(2).all(|w| {
        let (a, b) = (profile.ratios[w[0]], profile.ratios[w[1]]);
        a > b || (a == b && w[0] < w[1])
    });

    // ten filters drawn from the trained conv1, rescaled by positive factors
    let w = model.param("conv1.weight").unwrap();
    let b = model.param("conv1.bias").unwrap();
    let [filters, c, k, _] = *w.shape() else { unreachable!() };
    let per = c * k * k;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let picked: Vec<usize> = (0..10).map(|_| rng.gen_range(0..filters)).collect();
    let pick = |alpha: f32| {
        let wd: Vec<f32> = picked.iter().flat_map(|&f| w.data()[f * per..(f + 1) * per].iter().map(|v| v * alpha)).collect();
        let bd: Vec<f32> = picked.iter().map(|&f| b.data()[f] * alpha).collect();
        one_conv(Tensor::new(vec![10, c, k, k], wd).unwrap(), Tensor::new(vec![10], bd).unwrap())
    };
    let base = activation_ratio(&pick(1.0), "conv1", &train_hha, 16).unwrap().ratios;
    let alphas = [0.125f32, 0.5, 2.0, 16.0];
    let invariant = alphas
        .iter()
        .all(|&a| activation_ratio(&pick(a), "conv1", &train_hha, 16).unwrap().ratios == base);

    let pass = in_range && permutation && stable && invariant;
    report(
        8,
        "diagnostics",
        pass,
        &format!(
            "conv1 profile of {} filters over {} samples: in [0,1] {in_range}, stable permutation {}, scale invariant for α in {alphas:?} on 10 filters {invariant}",
            profile.ratios.len(),
            profile.samples,
            permutation && stable
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_formats() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut round_trips = true;
    for shape in [vec![], vec![2, 3, 4], vec![1, 5], vec![7]] {
        let t = Tensor::randn(&shape, 3.0, &mut rng);
        let mut bytes = Vec::new();
        encode_tensor(&t, &mut bytes).unwrap();
        let back = decode_tensor(&bytes).unwrap();
        round_trips &= back.shape() == t.shape() && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let mut ckpt = BTreeMap::new();
    ckpt.insert("conv1.weight".to_string(), Tensor::randn(&[4, 3, 5, 5], 0.1, &mut rng));
    ckpt.insert("conv1.bias".to_string(), Tensor::new(vec![4], vec![f32::MIN_POSITIVE, -0.0, 1e30, 7.0]).unwrap());
    let bytes = encode_checkpoint(&ckpt).unwrap();
    let back = decode_checkpoint(&bytes).unwrap();
    round_trips &= back.len() == ckpt.len()
        && back.iter().all(|(k, v)| v.data().iter().zip(ckpt[k].data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    round_trips &= encode_checkpoint(&back).unwrap() == bytes;

    let base = Path::new(".");
    let header = "rgb_path,depth_path,label,split\n";
    type Check = (&'static str, Box<dyn Fn() -> bool>);
    let is_format = |r: Result<(), Error>| matches!(r, Err(Error::Format { .. }));
    let is_data = |r: Result<(), Error>| matches!(r, Err(Error::Data(_)));
    let cases: Vec<Check> = vec![
        ("pgm plain-text magic", Box::new(move || is_format(decode_pgm_depth(b"P2\n1 1\n65535\n0", None).map(drop)))),
        ("pgm 8-bit maxval", Box::new(move || is_format(decode_pgm_depth(b"P5\n1 1\n255\n\x07", None).map(drop)))),
        ("pgm truncated payload", Box::new(move || is_format(decode_pgm_depth(b"P5\n2 2\n65535\n\x00\x01\x00", None).map(drop)))),
        ("pgm non-numeric width", Box::new(move || is_format(decode_pgm_depth(b"P5\nx 2\n65535\n", None).map(drop)))),
        ("ppm 16-bit maxval", Box::new(move || is_format(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").map(drop)))),
        ("ppm truncated payload", Box::new(move || is_format(decode_ppm(b"P6\n2 1\n255\n\x01\x02\x03\x04").map(drop)))),
        ("manifest wrong header", Box::new(move || is_data(parse_manifest("rgb,depth,label,split\na,b,0,train\n", base, false).map(drop)))),
        ("manifest non-dense labels", Box::new(move || {
            is_data(parse_manifest(&format!("{header}a,b,0,train\na,b,2,test\n"), base, false).map(drop))
        })),
        ("manifest unknown split", Box::new(move || {
            is_data(parse_manifest(&format!("{header}a,b,0,train\na,b,1,val\n"), base, false).map(drop))
        })),
        ("manifest missing file", Box::new(move || {
            let r = parse_manifest(&format!("{header}nope.ppm,nope.pgm,0,train\n"), base, true);
            matches!(&r, Err(Error::Data(m)) if m.contains("row 2"))
        })),
    ];
    let rejected: Vec<&str> = cases.iter().filter(|(_, f)| f()).map(|(n, _)| *n).collect();
    let missed: Vec<&str> = cases.iter().filter(|(_, f)| !f()).map(|(n, _)| *n).collect();
    let pass = round_trips && missed.is_empty() && rejected.len() == 10;
    report(
        9,
        "formats",
        pass,
        &format!(
            "bitwise round trips: {round_trips}; {}/10 malformed inputs rejected with the expected class; missed {missed:?}",
            rejected.len()
        ),
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 10

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["depthseed"];
    full.extend_from_slice(args);
    depthseed::cli::main_with_args(full)
}

/// Runs the whole recipe into `root`; returns the exit code of each stage.
fn recipe(root: &Path, seed: &str) -> Vec<i32> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let (data, hha, wsp, depth, rgb, rgbd) = (p("data"), p("hha"), p("wsp"), p("depth"), p("rgb"), p("rgbd"));
    let manifest = format!("{hha}/manifest.csv");
    let net = ["--set", "init=he", "--set", "conv_widths=8,16,16,16", "--set", "fc_width=32", "--set", "epochs=2", "--set", "batch_size=8"];
    let mut codes = vec![
        cli(&["synth", "--out", &data, "--seed", seed, "--categories", "4", "--per-class", "12", "--test-per-class", "4", "--set", "size=48"]),
        cli(&["encode-hha", "--out", &hha, "--seed", seed, "--manifest", &format!("{data}/manifest.csv")]),
        cli(&[
            "pretrain-wsp", "--out", &wsp, "--seed", seed, "--manifest", &manifest, "--set", "init=he", "--set",
            "conv_widths=8,16,16", "--set", "epochs=2", "--set", "batch_size=16",
        ]),
    ];
    let mut train_depth = vec!["train", "--out", &depth, "--seed", seed, "--manifest", &manifest];
    let wsp_ckpt = format!("{wsp}/wsp.dtns");
    train_depth.extend(["--init-from", &wsp_ckpt]);
    train_depth.extend(net);
    codes.push(cli(&train_depth));
    let mut train_rgb = vec!["train", "--out", &rgb, "--seed", seed, "--manifest", &manifest, "--set", "modality=rgb"];
    train_rgb.extend(net);
    codes.push(cli(&train_rgb));
    let (rgb_ckpt, depth_ckpt) = (format!("{rgb}/model.dtns"), format!("{depth}/model.dtns"));
    codes.push(cli(&[
        "train-rgbd", "--out", &rgbd, "--seed", seed, "--manifest", &manifest, "--rgb", &rgb_ckpt, "--depth", &depth_ckpt,
        "--set", "hidden=16", "--set", "epochs=2", "--set", "lr=0.001", "--set", "batch_size=8",
    ]));
    codes.push(cli(&["eval", "--out", &p("eval"), "--seed", seed, "--manifest", &manifest, "--model", &depth_ckpt, "--feature-layer", "relu7", "--wsvm"]));
    codes.push(cli(&["eval", "--out", &p("eval-rgbd"), "--seed", seed, "--manifest", &manifest, "--model", &format!("{rgbd}/rgbd.dtns")]));
    codes
}

fn artifacts(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(
                path.extension().and_then(|e| e.to_str()),
                Some("dtns" | "arch" | "jsonl" | "csv" | "txt" | "ppm" | "pgm")
            ) {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let codes_a = recipe(a.path(), "5");
    let codes_b = recipe(b.path(), "5");
    let all_ok = codes_a.iter().chain(&codes_b).all(|&c| c == 0);
    let files = artifacts(a.path());
    let mut differing = Vec::new();
    let mut compared = 0;
    for rel in &files {
        // this manifest pins absolute rgb paths, which differ by run directory
        if rel == Path::new("hha/manifest.csv") {
            continue;
        }
        compared += 1;
        let same = std::fs::read(a.path().join(rel)).ok() == std::fs::read(b.path().join(rel)).ok();
        if !same {
            differing.push(rel.display().to_string());
        }
    }
    let has_checkpoints = files.iter().filter(|f| f.extension().is_some_and(|e| e == "dtns" && !f.starts_with("hha"))).count();
    let pass = all_ok && differing.is_empty() && has_checkpoints >= 4;
    report(
        10,
        "end-to-end determinism",
        pass,
        &format!(
            "exit codes {codes_a:?} / {codes_b:?}; {compared} artifacts compared ({has_checkpoints} checkpoints), differing {differing:?}"
        ),
    );
    assert!(pass);
}
