//! The `depthseed` command line. Every subcommand resolves a flat
//! `key=value` config (defaults, then `--config` files, then `--set`
//! overrides, then dedicated flags), writes it to `config.resolved.txt` in the
//! output directory, and records its results in `metrics.jsonl`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::KeyValues;
use crate::data::{
    encode_hha, load_depth, load_manifest, load_split, save_tensor, write_synthetic_dataset, DepthEncoding, ImageSet,
    Manifest, Modality, Record, Split, SynthConfig,
};
use crate::diagnostics::{activation_ratio, export_filter_grid, profile_report};
use crate::error::{Error, Result};
use crate::eval::{
    class_counts, compute_class_weights, mean_class_accuracy, predictions_csv, train_svm, SvmConfig,
    DEFAULT_WEIGHT_EXPONENT,
};
use crate::fusion::{build_rgbd_model, train_rgbd, PairedSet, RgbdModel};
use crate::models::{
    arch_path, build_preset, load_model, remove_top_layers, save_model, transfer_conv_weights, ArchPreset,
    InitScheme, LayerKind, ModelGraph, PresetConfig,
};
use crate::training::{
    apply_strategy, extract_features, predict_all, pretrain_wsp, train, FreezePlan, Strategy, TrainConfig, TrainLog,
};

pub const RESOLVED_CONFIG: &str = "config.resolved.txt";
pub const METRICS: &str = "metrics.jsonl";
/// Caps the worker threads; 0 or unset means one per core.
pub const THREADS_ENV: &str = "DEPTHSEED_THREADS";

#[derive(Parser, Debug)]
#[command(name = "depthseed", version, about = "Depth CNNs for RGB-D scene recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
    /// key=value config file; later files win.
    #[arg(long = "config", value_name = "FILE")]
    pub configs: Vec<PathBuf>,
    /// key=value override applied after the config files.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic RGB-D dataset with its manifest.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        categories: Option<usize>,
        /// Scenes per category, train and test together.
        #[arg(long)]
        per_class: Option<usize>,
        /// How many of each category's scenes go to the test split.
        #[arg(long)]
        test_per_class: Option<usize>,
    },
    /// Encode every depth map of a manifest as HHA tensors.
    EncodeHha {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Weakly supervised patch pretraining of the small WSP network.
    PretrainWsp {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train or fine-tune a single-modality network.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Start from this checkpoint: same architecture keeps every layer
        /// below fc8, otherwise only conv weights are transferred.
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// full, ft-top, ft-bottom or ft-keep.
        #[arg(long)]
        strategy: Option<String>,
        /// Layer at which the strategy splits the network.
        #[arg(long)]
        split: Option<String>,
    },
    /// Joint RGB-D training on top of two single-modality checkpoints.
    TrainRgbd {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        depth: PathBuf,
    },
    /// Test-split accuracy, either of the network itself or of a linear SVM
    /// on one of its layers.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        feature_layer: Option<String>,
        /// Weight the SVM classes by inverse frequency.
        #[arg(long)]
        wsvm: bool,
    },
    /// Filter activation-ratio profiles of conv layers.
    Diagnose {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "layer")]
        layers: Vec<String>,
    },
    /// Write the kernels of a conv layer as a PPM grid.
    ExportFilters {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: Option<String>,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage, 2 I/O or missing input, 3 runtime.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV}={raw} is not a thread count")))?;
    if n > 0 {
        // only the first call in a process can size the global pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            run,
            categories,
            per_class,
            test_per_class,
        } => cmd_synth(&run, categories, per_class, test_per_class),
        Command::EncodeHha { run, manifest } => cmd_encode_hha(&run, &manifest),
        Command::PretrainWsp { run, manifest } => cmd_pretrain_wsp(&run, &manifest),
        Command::Train {
            run,
            manifest,
            init_from,
            strategy,
            split,
        } => cmd_train(&run, &manifest, init_from.as_deref(), strategy, split),
        Command::TrainRgbd {
            run,
            manifest,
            rgb,
            depth,
        } => cmd_train_rgbd(&run, &manifest, &rgb, &depth),
        Command::Eval {
            run,
            manifest,
            model,
            feature_layer,
            wsvm,
        } => cmd_eval(&run, &manifest, &model, feature_layer, wsvm),
        Command::Diagnose {
            run,
            manifest,
            model,
            layers,
        } => cmd_diagnose(&run, &manifest, &model, &layers),
        Command::ExportFilters { run, model, layer } => cmd_export_filters(&run, &model, layer),
    }
}

const MODEL_KEYS: [&str; 7] = [
    "modality",
    "conv_widths",
    "fc_width",
    "spp_levels",
    "init",
    "init_std",
    "gravity",
];

/// A run's output directory, resolved config and metrics sink.
struct Run {
    out: PathBuf,
    kv: KeyValues,
    metrics: Vec<Value>,
    started: Instant,
}

impl Run {
    /// Layers config sources over `defaults`, checks keys and writes the
    /// resolved snapshot.
    fn start(args: &RunArgs, defaults: &[(&str, String)], flags: &[(&str, Option<String>)], known: &[&str]) -> Result<Self> {
        let mut kv = KeyValues::new();
        for path in &args.configs {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            kv.merge(&KeyValues::parse(&text)?);
        }
        kv.apply_overrides(&args.overrides)?;
        if let Some(seed) = args.seed {
            kv.set("seed", seed.to_string());
        }
        for (key, value) in flags {
            if let Some(v) = value {
                kv.set(key, v.clone());
            }
        }
        kv.set_default("seed", "0");
        for (key, value) in defaults {
            kv.set_default(key, value.clone());
        }
        let mut all: Vec<&str> = known.to_vec();
        all.push("seed");
        kv.reject_unknown(&all)?;
        std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
        let run = Run {
            out: args.out.clone(),
            kv,
            metrics: Vec::new(),
            started: Instant::now(),
        };
        run.write(RESOLVED_CONFIG, run.kv.render())?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn seed(&self) -> Result<u64> {
        Ok(self.kv.get("seed")?.expect("seed has a default"))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        self.kv
            .get(key)?
            .ok_or_else(|| Error::Config(format!("`{key}` is required")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.kv.raw(key).unwrap_or_default();
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("cannot parse `{s}` in `{key}={raw}`")))
            })
            .collect()
    }

    fn record(&mut self, value: Value) {
        self.metrics.push(value);
    }

    fn log_epochs(&mut self, stage: &str, log: &TrainLog) {
        for r in &log.epochs {
            self.record(json!({
                "stage": stage,
                "epoch": r.epoch,
                "loss": r.loss,
                "train_acc": r.train_acc,
                "test_acc": r.test_acc,
            }));
        }
    }

    /// Writes the metrics file; wall time goes to stderr only so identical
    /// runs produce identical files.
    fn finish(self, command: &str) -> Result<()> {
        let mut text = String::new();
        for m in &self.metrics {
            let mut m = m.clone();
            if let Value::Object(map) = &mut m {
                map.insert("command".into(), json!(command));
            }
            text.push_str(&m.to_string());
            text.push('\n');
        }
        self.write(METRICS, text)?;
        eprintln!("{command}: done in {:.1}s, outputs in {}", self.started.elapsed().as_secs_f64(), self.out.display());
        Ok(())
    }

    fn train_config(&self) -> Result<TrainConfig> {
        TrainConfig::from_kv(&self.kv, "")
    }

    fn gravity(&self) -> Result<DepthEncoding> {
        let g: Vec<f64> = self.list("gravity")?;
        let gravity: [f64; 3] = g
            .try_into()
            .map_err(|_| Error::Config("`gravity` needs three comma-separated components".into()))?;
        Ok(DepthEncoding { gravity })
    }

    fn modality(&self) -> Result<Modality> {
        match self.kv.raw("modality").unwrap_or("depth") {
            "depth" => Ok(Modality::Depth),
            "rgb" => Ok(Modality::Rgb),
            other => Err(Error::Config(format!("modality must be `depth` or `rgb`, got `{other}`"))),
        }
    }

    fn init(&self) -> Result<InitScheme> {
        match self.kv.raw("init").unwrap_or("gaussian") {
            "gaussian" => Ok(InitScheme::Gaussian {
                std: self.get("init_std")?,
            }),
            "he" => Ok(InitScheme::He),
            other => Err(Error::Config(format!("init must be `gaussian` or `he`, got `{other}`"))),
        }
    }

    fn preset_config(&self, preset: ArchPreset, categories: usize, input_size: usize) -> Result<PresetConfig> {
        let mut cfg = PresetConfig::defaults(preset, categories);
        cfg.input_size = input_size;
        let widths: Vec<usize> = self.list("conv_widths")?;
        if !widths.is_empty() {
            cfg.conv_widths = widths;
        }
        if let Some(w) = self.kv.get("fc_width")? {
            cfg.fc_width = w;
        }
        let levels: Vec<usize> = self.list("spp_levels")?;
        if !levels.is_empty() {
            cfg.spp_levels = levels;
        }
        cfg.init = self.init()?;
        Ok(cfg)
    }
}

fn model_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("modality", "depth".into()),
        ("init", "gaussian".into()),
        ("init_std", "0.01".into()),
        ("gravity", "0,-1,0".into()),
    ]
}

fn train_keys(extra: &[&'static str]) -> Vec<&'static str> {
    let mut keys: Vec<&str> = TrainConfig::KEYS.to_vec();
    keys.extend(MODEL_KEYS);
    keys.extend(extra);
    keys
}

fn square_side(set: &ImageSet) -> Result<usize> {
    match set.sample_shape() {
        Some([_, h, w]) if h == w => Ok(*h),
        Some(shape) => Err(Error::Data(format!("images must be square, got {shape:?}"))),
        None => Err(Error::Data("the training split is empty".into())),
    }
}

/// Train split plus the test split when it has samples.
fn load_splits(manifest: &Manifest, modality: Modality, enc: DepthEncoding) -> Result<(ImageSet, Option<ImageSet>)> {
    let train_set = load_split(manifest, Split::Train, modality, enc)?;
    let test_set = load_split(manifest, Split::Test, modality, enc)?;
    Ok((train_set, (!test_set.images.is_empty()).then_some(test_set)))
}

fn final_metrics(log: &TrainLog) -> Value {
    let last = log.last();
    json!({
        "stage": "final",
        "epochs": log.epochs.len(),
        "loss": last.map(|r| r.loss),
        "train_acc": last.map(|r| r.train_acc),
        "test_mean_class_acc": last.and_then(|r| r.test_acc),
    })
}

pub fn cmd_synth(args: &RunArgs, categories: Option<usize>, per_class: Option<usize>, test_per_class: Option<usize>) -> Result<()> {
    let d = SynthConfig::default();
    let defaults = vec![
        ("categories", "8".to_string()),
        ("per_class", "40".into()),
        ("size", d.size.to_string()),
        ("tint_jitter", d.tint_jitter.to_string()),
        ("albedo_noise", d.albedo_noise.to_string()),
        ("depth_noise", d.depth_noise.to_string()),
        ("hole_fraction", d.hole_fraction.to_string()),
        ("max_tilt", d.max_tilt.to_string()),
        ("clutter", d.clutter.to_string()),
    ];
    let flags = [
        ("categories", categories.map(|v| v.to_string())),
        ("per_class", per_class.map(|v| v.to_string())),
        ("test_per_class", test_per_class.map(|v| v.to_string())),
    ];
    let known = [
        "categories",
        "per_class",
        "test_per_class",
        "size",
        "tint_jitter",
        "albedo_noise",
        "depth_noise",
        "hole_fraction",
        "max_tilt",
        "clutter",
    ];
    let mut run = Run::start(args, &defaults, &flags, &known)?;
    let categories: usize = run.get("categories")?;
    let per_class: usize = run.get("per_class")?;
    let test_per_class: usize = run.kv.get("test_per_class")?.unwrap_or(per_class / 3);
    if test_per_class > per_class {
        return Err(Error::Config(format!(
            "test_per_class ({test_per_class}) exceeds per_class ({per_class})"
        )));
    }
    let cfg = SynthConfig {
        size: run.get("size")?,
        tint_jitter: run.get("tint_jitter")?,
        albedo_noise: run.get("albedo_noise")?,
        depth_noise: run.get("depth_noise")?,
        hole_fraction: run.get("hole_fraction")?,
        max_tilt: run.get("max_tilt")?,
        clutter: run.get("clutter")?,
    };
    let manifest = write_synthetic_dataset(
        &run.out,
        categories,
        per_class - test_per_class,
        test_per_class,
        run.seed()?,
        &cfg,
    )?;
    run.record(json!({
        "stage": "final",
        "samples": manifest.records.len(),
        "train": manifest.split(Split::Train).len(),
        "test": manifest.split(Split::Test).len(),
        "categories": categories,
    }));
    run.finish("synth")
}

pub fn cmd_encode_hha(args: &RunArgs, manifest_path: &Path) -> Result<()> {
    let defaults = vec![("gravity", "0,-1,0".to_string())];
    let mut run = Run::start(args, &defaults, &[], &["gravity"])?;
    let enc = run.gravity()?;
    let manifest = load_manifest(manifest_path)?;
    manifest.require(Modality::Depth)?;
    let hha_dir = run.path("hha");
    std::fs::create_dir_all(&hha_dir).map_err(|e| Error::io(&hha_dir, e))?;
    let mut problems = Vec::new();
    let mut records = Vec::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let depth = r.depth.as_deref().expect("checked by require");
        let target = hha_dir.join(format!("{i:05}_hha.dtns"));
        match load_depth(depth, None).and_then(|d| encode_hha(&d, enc.gravity)) {
            Ok(hha) => {
                save_tensor(&hha, &target)?;
                // the new manifest lives elsewhere, so pin the rgb path
                let rgb = r
                    .rgb
                    .as_deref()
                    .map(|p| std::path::absolute(p).map_err(|e| Error::io(p, e)))
                    .transpose()?;
                records.push(Record {
                    rgb,
                    depth: Some(target),
                    ..r.clone()
                });
            }
            // data rows start at line 2, after the header
            Err(e) => problems.push(format!("row {}: {e}", i + 2)),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Data(format!("HHA encoding failed:\n{}", problems.join("\n"))));
    }
    let encoded = Manifest {
        records,
        num_classes: manifest.num_classes,
    };
    run.write("manifest.csv", encoded.to_csv(&run.out))?;
    run.record(json!({"stage": "final", "encoded": encoded.records.len()}));
    run.finish("encode-hha")
}

pub fn cmd_pretrain_wsp(args: &RunArgs, manifest_path: &Path) -> Result<()> {
    let mut defaults = model_defaults();
    defaults.extend([("grid", "4".to_string()), ("patch", "35".into())]);
    let mut run = Run::start(args, &defaults, &[], &train_keys(&["grid", "patch"]))?;
    let manifest = load_manifest(manifest_path)?;
    let (train_set, test_set) = load_splits(&manifest, run.modality()?, run.gravity()?)?;
    let (grid, patch): (usize, usize) = (run.get("grid")?, run.get("patch")?);
    let cfg = run.train_config()?;
    let preset = run.preset_config(ArchPreset::Wsp, manifest.num_classes, patch)?;
    let model = build_preset(ArchPreset::Wsp, &preset, cfg.seed)?;
    let (model, log) = pretrain_wsp(model, &train_set, test_set.as_ref(), grid, patch, &cfg)?;
    save_model(&model, run.path("wsp.dtns"))?;
    run.write("train_log.csv", log.to_csv())?;
    run.log_epochs("pretrain", &log);
    run.record(final_metrics(&log));
    run.finish("pretrain-wsp")
}

/// Starting point of fine-tuning: a model with the same layers keeps
/// everything below fc8; any other model only lends its conv weights.
fn initialise_from(src: &ModelGraph, fresh: &ModelGraph, categories: usize) -> Result<ModelGraph> {
    let body = |m: &ModelGraph| -> Vec<String> {
        m.layers()
            .iter()
            .filter(|l| l.name != "fc8" && !matches!(l.kind, LayerKind::Loss))
            .map(ToString::to_string)
            .collect()
    };
    if body(src) == body(fresh) && src.input_shape() == fresh.input_shape() {
        let fc8 = src.layer_index("fc8")?;
        let below = src.layers()[fc8 - 1].name.clone();
        remove_top_layers(src, &below, categories)
    } else {
        transfer_conv_weights(src, fresh)
    }
}

pub fn cmd_train(
    args: &RunArgs,
    manifest_path: &Path,
    init_from: Option<&Path>,
    strategy: Option<String>,
    split: Option<String>,
) -> Result<()> {
    let mut defaults = model_defaults();
    defaults.extend([
        ("preset", "dcnn".to_string()),
        ("strategy", "full".into()),
        ("split", "conv3".into()),
    ]);
    let flags = [("strategy", strategy), ("split", split)];
    let mut run = Run::start(args, &defaults, &flags, &train_keys(&["preset", "strategy", "split"]))?;
    let manifest = load_manifest(manifest_path)?;
    let (train_set, test_set) = load_splits(&manifest, run.modality()?, run.gravity()?)?;
    let cfg = run.train_config()?;
    let preset: ArchPreset = run.get::<String>("preset")?.parse()?;
    let strategy: Strategy = run.get::<String>("strategy")?.parse()?;
    let split: String = run.get("split")?;
    let k = manifest.num_classes;
    let fresh = build_preset(preset, &run.preset_config(preset, k, square_side(&train_set)?)?, cfg.seed)?;
    let start = match init_from {
        Some(path) => initialise_from(&load_model(path)?, &fresh, k)?,
        None => fresh,
    };
    let (model, plan) = if strategy == Strategy::Full {
        let plan = FreezePlan::train_all(&start);
        (start, plan)
    } else {
        apply_strategy(strategy, &start, &split, k)?
    };
    let test_dyn = test_set.as_ref().map(|t| t as &dyn crate::data::SampleSource);
    let (model, log) = train(model, &train_set, test_dyn, &cfg, &plan)?;
    save_model(&model, run.path("model.dtns"))?;
    run.write("train_log.csv", log.to_csv())?;
    run.log_epochs("train", &log);
    let mut last = final_metrics(&log);
    last["strategy"] = json!(strategy.name());
    last["frozen_layers"] = json!(plan.frozen_layers());
    run.record(last);
    run.finish("train")
}

pub fn cmd_train_rgbd(args: &RunArgs, manifest_path: &Path, rgb: &Path, depth: &Path) -> Result<()> {
    let mut defaults = model_defaults();
    defaults.extend([
        ("cut_rgb", "relu7".to_string()),
        ("cut_depth", "relu7".into()),
        ("hidden", "512".into()),
    ]);
    let mut run = Run::start(args, &defaults, &[], &train_keys(&["cut_rgb", "cut_depth", "hidden"]))?;
    let manifest = load_manifest(manifest_path)?;
    let enc = run.gravity()?;
    let (rgb_train, rgb_test) = load_splits(&manifest, Modality::Rgb, enc)?;
    let (depth_train, depth_test) = load_splits(&manifest, Modality::Depth, enc)?;
    let cfg = run.train_config()?;
    let model = build_rgbd_model(
        &load_model(rgb)?,
        &load_model(depth)?,
        &run.get::<String>("cut_rgb")?,
        &run.get::<String>("cut_depth")?,
        run.get("hidden")?,
        manifest.num_classes,
        cfg.seed,
    )?;
    let train_set = PairedSet::new(rgb_train, depth_train)?;
    let test_set = match (rgb_test, depth_test) {
        (Some(r), Some(d)) => Some(PairedSet::new(r, d)?),
        _ => None,
    };
    let (model, log) = train_rgbd(model, &train_set, test_set.as_ref(), &cfg, None)?;
    model.save(run.path("rgbd.dtns"))?;
    run.write("train_log.csv", log.to_csv())?;
    run.log_epochs("train-rgbd", &log);
    run.record(final_metrics(&log));
    run.finish("train-rgbd")
}

fn is_rgbd_checkpoint(path: &Path) -> Result<bool> {
    let arch = arch_path(path);
    let text = std::fs::read_to_string(&arch).map_err(|e| Error::io(&arch, e))?;
    Ok(text.starts_with("rgbd "))
}

pub fn cmd_eval(
    args: &RunArgs,
    manifest_path: &Path,
    model_path: &Path,
    feature_layer: Option<String>,
    wsvm: bool,
) -> Result<()> {
    let defaults = vec![
        ("modality", "depth".to_string()),
        ("gravity", "0,-1,0".into()),
        ("batch_size", "32".into()),
        ("wsvm", "false".into()),
        ("weight_p", DEFAULT_WEIGHT_EXPONENT.to_string()),
        ("svm_c", "1".into()),
        ("svm_epochs", "100".into()),
    ];
    let flags = [
        ("feature_layer", feature_layer),
        ("wsvm", wsvm.then(|| "true".to_string())),
    ];
    let known = [
        "modality",
        "gravity",
        "batch_size",
        "feature_layer",
        "wsvm",
        "weight_p",
        "svm_c",
        "svm_epochs",
    ];
    let mut run = Run::start(args, &defaults, &flags, &known)?;
    let manifest = load_manifest(manifest_path)?;
    let k = manifest.num_classes;
    let enc = run.gravity()?;
    let batch: usize = run.get("batch_size")?;
    let rgbd = is_rgbd_checkpoint(model_path)?;
    let (labels, preds, mode) = if rgbd {
        if run.kv.raw("feature_layer").is_some() {
            return Err(Error::Config("--feature-layer applies to single-modality checkpoints".into()));
        }
        let model = RgbdModel::load(model_path)?;
        let test_set = PairedSet::new(
            load_split(&manifest, Split::Test, Modality::Rgb, enc)?,
            load_split(&manifest, Split::Test, Modality::Depth, enc)?,
        )?;
        let preds = predict_all(&model, &test_set, batch)?;
        (test_set.rgb.labels.clone(), preds, "softmax")
    } else {
        let model = load_model(model_path)?;
        let modality = run.modality()?;
        let test_set = load_split(&manifest, Split::Test, modality, enc)?;
        match run.kv.raw("feature_layer").map(str::to_string) {
            None => (test_set.labels.clone(), predict_all(&model, &test_set, batch)?, "softmax"),
            Some(layer) => {
                let train_set = load_split(&manifest, Split::Train, modality, enc)?;
                let (f_train, y_train) = extract_features(&model, &layer, &train_set, batch)?;
                let (f_test, y_test) = extract_features(&model, &layer, &test_set, batch)?;
                let weighted: bool = run.get("wsvm")?;
                let weights = if weighted {
                    Some(compute_class_weights(&class_counts(&y_train, k), run.get("weight_p")?)?)
                } else {
                    None
                };
                let svm_cfg = SvmConfig {
                    c: run.get("svm_c")?,
                    epochs: run.get("svm_epochs")?,
                    seed: run.seed()?,
                };
                let svm = train_svm(&f_train, &y_train, weights.as_ref(), &svm_cfg)?;
                let preds = svm.predict(&f_test)?;
                if let Some(w) = &weights {
                    run.record(json!({"stage": "class_weights", "weights": w.weights, "counts": w.counts}));
                }
                (y_test, preds, if weighted { "wsvm" } else { "svm" })
            }
        }
    };
    let mca = mean_class_accuracy(&preds, &labels, k)?;
    run.write("predictions.csv", predictions_csv(&labels, &preds))?;
    run.record(json!({
        "stage": "final",
        "mode": mode,
        "samples": labels.len(),
        "test_mean_class_acc": mca,
    }));
    println!("mean class accuracy: {mca:.4}");
    run.finish("eval")
}

pub fn cmd_diagnose(args: &RunArgs, manifest_path: &Path, model_path: &Path, layers: &[String]) -> Result<()> {
    let defaults = vec![
        ("modality", "depth".to_string()),
        ("gravity", "0,-1,0".into()),
        ("batch_size", "32".into()),
        ("layers", "conv1".into()),
        ("split", "test".into()),
    ];
    let flags = [("layers", (!layers.is_empty()).then(|| layers.join(",")))];
    let mut run = Run::start(args, &defaults, &flags, &["modality", "gravity", "batch_size", "layers", "split"])?;
    let manifest = load_manifest(manifest_path)?;
    let model = load_model(model_path)?;
    let split = match run.kv.raw("split").unwrap_or_default() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(Error::Config(format!("split must be train or test, got `{other}`"))),
    };
    let set = load_split(&manifest, split, run.modality()?, run.gravity()?)?;
    let batch: usize = run.get("batch_size")?;
    let mut profiles = Vec::new();
    for layer in run.list::<String>("layers")? {
        let p = activation_ratio(&model, &layer, &set, batch)?;
        let dead = p.ratios.iter().filter(|&&r| r == 0.0).count();
        run.record(json!({
            "stage": "profile",
            "layer": layer,
            "filters": p.ratios.len(),
            "dead_filters": dead,
            "mean_ratio": p.ratios.iter().sum::<f64>() / p.ratios.len().max(1) as f64,
        }));
        profiles.push(p);
    }
    profile_report(&profiles, run.path("profile.csv"))?;
    run.finish("diagnose")
}

pub fn cmd_export_filters(args: &RunArgs, model_path: &Path, layer: Option<String>) -> Result<()> {
    let defaults = vec![("layer", "conv1".to_string())];
    let mut run = Run::start(args, &defaults, &[("layer", layer)], &["layer"])?;
    let model = load_model(model_path)?;
    let layer: String = run.get("layer")?;
    let grid = export_filter_grid(&model, &layer)?;
    let name = format!("filters_{layer}.ppm");
    crate::data::save_rgb(&grid, run.path(&name))?;
    run.record(json!({"stage": "final", "layer": layer, "file": name, "shape": grid.shape()}));
    run.finish("export-filters")
}
