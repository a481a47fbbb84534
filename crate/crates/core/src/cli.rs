//! Batch command-line interface: synth, train, count, eval, ablation, verify.
//!
//! Exit codes are a stable scripting contract: 0 success, 2 usage/input
//! error, 3 numerical failure (non-finite loss, failed verification).
//! Settings resolve in precedence order: explicit flag > config file >
//! RETICOUNT_OUT_DIR (output directory only) > built-in default.

use crate::checkpoint::CheckpointError;
use crate::data::{
    self, load_raster, parse_voc_xml, split_dataset, standardize, write_synthetic_dataset,
    AugmentConfig, Raster, SmearSpec, StandardizePolicy,
};
use crate::detector::{
    load_training_checkpoint, run_count_regression_ablation, save_training_checkpoint, train,
    EpochMetrics, ModelConfig, Network, TrainError, TrainOptions, TrainSample,
};
use crate::geometry::Detection;
use crate::optim::{AdamHyper, AdamState, DecayUnit};
use crate::report::{
    count_cells, evaluate_counts, evaluate_detections, render_overlay, CountReport, OverlayStyle,
};
use crate::{derive_seed, verify};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const ENV_OUT_DIR: &str = "RETICOUNT_OUT_DIR";

const EXIT_USAGE: i32 = 2;
const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
enum CliError {
    /// Bad input, bad paths, unparseable files: exit 2.
    Usage(String),
    /// Non-finite numbers or failed verification: exit 3.
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<data::DataError> for CliError {
    fn from(e: data::DataError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NanLoss { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "reticount",
    version,
    about = "Detects and counts aggregate reticulocytes, punctate reticulocytes and erythrocytes in 300x300 blood-smear images"
)]
pub struct Cli {
    /// Flat key=value settings file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic smear dataset: images/, annotations/, manifest.csv
    Synth(SynthArgs),
    /// Train the detector on an images/ + annotations/ dataset
    Train(TrainArgs),
    /// Count cells in a directory of images using a trained checkpoint
    Count(CountArgs),
    /// Evaluate a checkpoint against labeled data
    Eval(EvalArgs),
    /// Train the direct count-regression head and record its learning curve
    Ablation(AblationArgs),
    /// Run verification suites against independent oracles
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of images to generate
    #[arg(long, default_value_t = 240)]
    images: usize,
    /// Class ratio aggregate:punctate:erythrocyte
    #[arg(long, default_value = "1:1:2")]
    ratio: String,
    /// Labeled cells per image (distributed by --ratio)
    #[arg(long, default_value_t = 12)]
    cells: usize,
    /// Heinz-body distractor cells per image (labeled as erythrocytes)
    #[arg(long, default_value_t = 2)]
    distractors: usize,
    /// standard: clean scenes; hard: blur + lighting gradient
    #[arg(long, value_enum, default_value_t = Preset::Standard)]
    preset: Preset,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Standard,
    Hard,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory containing images/ and annotations/
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.csv
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Inverse-time learning-rate decay coefficient
    #[arg(long)]
    decay: Option<f64>,
    /// Whether the decay counter advances per optimizer step or per epoch
    #[arg(long, value_enum)]
    decay_unit: Option<DecayUnitArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of the dataset used for training (rest validates)
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Seed for the train/validation shuffle
    #[arg(long)]
    split_seed: Option<u64>,
    /// Disable the augmentation pipeline
    #[arg(long)]
    no_augment: bool,
    /// Resume from <out>/latest.ckpt
    #[arg(long)]
    resume: bool,
    /// Confidence threshold for validation counting
    #[arg(long)]
    conf: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    /// Keep only latest.ckpt instead of one checkpoint file per epoch
    #[arg(long)]
    latest_only: bool,
    /// Parameter-name prefix to exclude from updates (repeatable)
    #[arg(long = "freeze", value_name = "PREFIX")]
    freeze: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecayUnitArg {
    Step,
    Epoch,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Directory of .png / .ppm images
    #[arg(long, value_name = "DIR")]
    images: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    conf: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Also write per-image overlay PNGs
    #[arg(long)]
    overlays: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Labeled dataset directory (images/ + annotations/)
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    conf: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    /// IoU threshold of the detection-matched metric
    #[arg(long)]
    match_iou: Option<f64>,
    /// Also write overlay PNGs with truth boxes dashed
    #[arg(long)]
    overlays: bool,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Learning-curve CSV path
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Which suite to run
    #[arg(value_enum, default_value_t = Suite::All)]
    suite: Suite,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Seeds per gradient check
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Augmentation draws
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Grad,
    Geom,
    Aug,
    All,
}

/// Flat key=value settings, e.g. `epochs = 40`. Lines starting with # are
/// comments.
#[derive(Debug, Default)]
struct ConfigFile {
    values: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "out",
    "data",
    "epochs",
    "batch",
    "lr",
    "decay",
    "decay_unit",
    "seed",
    "split_seed",
    "train_fraction",
    "conf",
    "nms_iou",
    "top_k",
    "match_iou",
];

impl ConfigFile {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "{}:{}: unknown setting `{key}`",
                    path.display(),
                    lineno + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Usage(format!("config setting `{key}`: cannot parse `{raw}`"))
            }),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(PathBuf::from)
    }
}

/// Resolved settings for the long-running commands; paths are validated
/// before any heavy work starts.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub hyper: AdamHyper,
    pub augment: bool,
    pub seed: u64,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub top_k: usize,
}

fn resolve_out_dir(flag: Option<PathBuf>, cfg: &ConfigFile, default: &str) -> PathBuf {
    flag.or_else(|| cfg.path("out"))
        .or_else(|| std::env::var_os(ENV_OUT_DIR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default))
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_dir() {
        return Err(CliError::Usage(format!(
            "{what} directory {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn create_out_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| {
        CliError::Usage(format!("cannot create output dir {}: {e}", path.display()))
    })
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = (|| -> CliResult<()> {
        let cfg = ConfigFile::load(cli.config.as_deref())?;
        match cli.command {
            Command::Synth(args) => command_synth(args, &cfg),
            Command::Train(args) => command_train(args, &cfg),
            Command::Count(args) => command_count(args, &cfg),
            Command::Eval(args) => command_eval(args, &cfg),
            Command::Ablation(args) => command_ablation(args, &cfg),
            Command::Verify(args) => command_verify(args),
        }
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn parse_ratio(text: &str) -> CliResult<[usize; 3]> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "ratio `{text}` must be A:P:E, e.g. 1:1:2"
        )));
    }
    let mut ratio = [0usize; 3];
    for (i, p) in parts.iter().enumerate() {
        ratio[i] = p
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("ratio part `{p}` is not a whole number")))?;
    }
    if ratio.iter().sum::<usize>() == 0 {
        return Err(CliError::Usage("ratio must not be all zeros".into()));
    }
    Ok(ratio)
}

/// Splits `cells` across the three classes proportionally to `ratio`,
/// assigning the remainder to erythrocytes.
fn counts_from_ratio(cells: usize, ratio: [usize; 3]) -> [usize; 3] {
    let total: usize = ratio.iter().sum();
    let mut counts = [0usize; 3];
    for c in 0..3 {
        counts[c] = cells * ratio[c] / total;
    }
    let assigned: usize = counts.iter().sum();
    counts[2] += cells - assigned;
    counts
}

fn command_synth(args: SynthArgs, cfg: &ConfigFile) -> CliResult<()> {
    if args.images == 0 {
        return Err(CliError::Usage("--images must be at least 1".into()));
    }
    let ratio = parse_ratio(&args.ratio)?;
    let counts = counts_from_ratio(args.cells, ratio);
    let out = resolve_out_dir(args.out, cfg, "synth_out");
    create_out_dir(&out)?;

    let preset = args.preset;
    let seed = args.seed;
    let distractors = args.distractors;
    let scenes = write_synthetic_dataset(&out, args.images, |i| {
        let image_seed = derive_seed(seed, i as u64);
        match preset {
            Preset::Standard => SmearSpec::standard(counts, distractors, image_seed),
            Preset::Hard => SmearSpec::hard(counts, distractors, image_seed),
        }
    })?;

    let mut totals = [0usize; 3];
    for scene in &scenes {
        let c = scene.annotation.class_counts();
        for k in 0..3 {
            totals[k] += c[k];
        }
    }
    println!(
        "wrote {} images to {} (aggregate {}, punctate {}, erythrocyte {} incl. {} distractors)",
        scenes.len(),
        out.display(),
        totals[0],
        totals[1],
        totals[2],
        distractors * scenes.len(),
    );
    Ok(())
}

/// Loads an images/ + annotations/ dataset into standardized samples.
/// Every annotation must parse and reference a loadable image.
fn load_dataset(dir: &Path) -> CliResult<Vec<TrainSample>> {
    let xml_dir = dir.join("annotations");
    let img_dir = dir.join("images");
    require_dir(&xml_dir, "annotations")?;
    require_dir(&img_dir, "images")?;

    let mut xml_files: Vec<PathBuf> = fs::read_dir(&xml_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("xml"))
        .collect();
    xml_files.sort();
    if xml_files.is_empty() {
        return Err(CliError::Usage(format!(
            "no .xml annotations under {}",
            xml_dir.display()
        )));
    }

    let mut samples = Vec::with_capacity(xml_files.len());
    for xml_path in &xml_files {
        let text = fs::read_to_string(xml_path)?;
        let annotation = parse_voc_xml(&text).map_err(|e| {
            CliError::Usage(format!("{}: {e}", xml_path.display()))
        })?;

        let mut image_path = img_dir.join(format!("{}.png", annotation.image_id));
        if !image_path.exists() {
            image_path = img_dir.join(format!("{}.ppm", annotation.image_id));
        }
        let raster = load_raster(&image_path)?;
        let boxes: Vec<_> = annotation.objects.iter().map(|o| o.bbox).collect();
        let (raster, boxes) = if raster.width == data::IMAGE_SIDE && raster.height == data::IMAGE_SIDE
        {
            (raster, boxes)
        } else {
            standardize(&raster, &boxes, StandardizePolicy::Resample)?
        };
        let boxes = annotation
            .objects
            .iter()
            .map(|o| o.class_id)
            .zip(boxes)
            .collect();
        samples.push(TrainSample {
            image_id: annotation.image_id,
            raster,
            boxes,
        });
    }
    Ok(samples)
}

#[allow(clippy::too_many_arguments)]
fn resolve_train_config(args: &TrainArgs, cfg: &ConfigFile) -> CliResult<RunConfig> {
    let data_dir = args
        .data
        .clone()
        .or_else(|| cfg.path("data"))
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let out_dir = resolve_out_dir(args.out.clone(), cfg, "train_out");

    let hyper = AdamHyper {
        lr0: args.lr.or(cfg.get("lr")?).unwrap_or(1e-3),
        decay: args.decay.or(cfg.get("decay")?).unwrap_or(5e-4),
        decay_unit: match args.decay_unit {
            Some(DecayUnitArg::Step) => DecayUnit::Step,
            Some(DecayUnitArg::Epoch) => DecayUnit::Epoch,
            None => match cfg.get::<String>("decay_unit")?.as_deref() {
                Some("epoch") => DecayUnit::Epoch,
                Some("step") | None => DecayUnit::Step,
                Some(other) => {
                    return Err(CliError::Usage(format!(
                        "decay_unit must be step or epoch, got `{other}`"
                    )))
                }
            },
        },
        ..AdamHyper::default()
    };
    let config = RunConfig {
        data_dir,
        out_dir,
        epochs: args.epochs.or(cfg.get("epochs")?).unwrap_or(40),
        batch_size: args.batch.or(cfg.get("batch")?).unwrap_or(8),
        hyper,
        augment: !args.no_augment,
        seed: args.seed.or(cfg.get("seed")?).unwrap_or(1),
        split_seed: args.split_seed.or(cfg.get("split_seed")?).unwrap_or(11),
        train_fraction: args
            .train_fraction
            .or(cfg.get("train_fraction")?)
            .unwrap_or(0.765),
        conf_threshold: args.conf.or(cfg.get("conf")?).unwrap_or(0.5),
        nms_iou: args.nms_iou.or(cfg.get("nms_iou")?).unwrap_or(0.45),
        top_k: cfg.get("top_k")?.unwrap_or(400),
    };
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(CliError::Usage(
            "train_fraction must be strictly between 0 and 1".into(),
        ));
    }
    require_dir(&config.data_dir, "dataset")?;
    Ok(config)
}

fn command_train(args: TrainArgs, cfg: &ConfigFile) -> CliResult<()> {
    let run_config = resolve_train_config(&args, cfg)?;
    create_out_dir(&run_config.out_dir)?;
    let samples = load_dataset(&run_config.data_dir)?;
    let (train_set, val_set) = split_dataset(samples, run_config.train_fraction, run_config.split_seed);
    println!(
        "dataset: {} training / {} validation images",
        train_set.len(),
        val_set.len()
    );

    let model_config = ModelConfig {
        freeze: args.freeze.clone(),
        ..ModelConfig::default()
    };
    let metrics_path = run_config.out_dir.join("metrics.csv");
    let latest = run_config.out_dir.join("latest.ckpt");

    let (mut net, mut state, start_epoch) = if args.resume {
        if !latest.exists() {
            return Err(CliError::Usage(format!(
                "--resume: {} not found",
                latest.display()
            )));
        }
        let (net, state, epochs_done) = load_training_checkpoint(model_config, &latest)?;
        println!("resuming after epoch {epochs_done}");
        (net, state, epochs_done)
    } else {
        let net = crate::detector::build_model(model_config, run_config.seed)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let state = AdamState::new(&net.param_refs());
        fs::write(&metrics_path, format!("{}\n", EpochMetrics::CSV_HEADER))?;
        (net, state, 0)
    };

    let opts = TrainOptions {
        epochs: run_config.epochs,
        batch_size: run_config.batch_size,
        seed: run_config.seed,
        hyper: run_config.hyper,
        augment: run_config.augment.then(AugmentConfig::default),
        conf_threshold: run_config.conf_threshold,
        nms_iou: run_config.nms_iou,
        top_k: run_config.top_k,
        checkpoint_dir: Some(run_config.out_dir.clone()),
        keep_epoch_checkpoints: !args.latest_only,
        ..TrainOptions::default()
    };

    if run_config.epochs == 0 || start_epoch >= run_config.epochs {
        save_training_checkpoint(&net, &state, start_epoch, &latest)?;
        println!("nothing to train (epochs = {}); wrote {}", run_config.epochs, latest.display());
        return Ok(());
    }

    let mut metrics_file = fs::OpenOptions::new().append(true).open(&metrics_path)?;
    train(
        &mut net,
        &mut state,
        &train_set,
        &val_set,
        &opts,
        start_epoch,
        |m| {
            writeln!(metrics_file, "{}", m.csv_row()).expect("metrics file is writable");
            metrics_file.flush().ok();
            println!(
                "epoch {:>3}  train loss {:.4}  val loss {:.4}  val count acc {:.3}/{:.3}/{:.3}",
                m.epoch,
                m.train_loss,
                m.val_loss,
                m.val_count_accuracy[0],
                m.val_count_accuracy[1],
                m.val_count_accuracy[2]
            );
        },
    )?;
    println!("finished; checkpoints in {}", run_config.out_dir.display());
    Ok(())
}

fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    require_dir(dir, "images")?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("ppm")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_network(checkpoint: &Path) -> CliResult<Network> {
    crate::detector::load_network_checkpoint(ModelConfig::default(), checkpoint)
        .map_err(CliError::from)
}

fn detect_image(
    net: &Network,
    path: &Path,
    conf: f64,
    nms_iou: f64,
    top_k: usize,
) -> CliResult<(String, Raster, Vec<Detection>)> {
    let raster = load_raster(path)?;
    let raster = if raster.width == data::IMAGE_SIDE && raster.height == data::IMAGE_SIDE {
        raster
    } else {
        standardize(&raster, &[], StandardizePolicy::Resample)?.0
    };
    let dets = net
        .forward_detect(&raster.to_tensor(), conf, nms_iou, top_k)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let image_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    Ok((image_id, raster, dets))
}

fn write_detections_file(
    path: &Path,
    detections: &[(String, Vec<Detection>)],
) -> CliResult<()> {
    let mut out = String::new();
    for (image_id, dets) in detections {
        for d in dets {
            let class_name = data::class_name_of(d.class_id).unwrap_or("unknown");
            let _ = writeln!(out, "{}", crate::geometry::format_detection(image_id, class_name, d));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn command_count(args: CountArgs, cfg: &ConfigFile) -> CliResult<()> {
    let out = resolve_out_dir(args.out, cfg, "count_out");
    let conf = args.conf.or(cfg.get("conf")?).unwrap_or(0.5);
    let nms_iou = args.nms_iou.or(cfg.get("nms_iou")?).unwrap_or(0.45);
    let top_k = args.top_k.or(cfg.get("top_k")?).unwrap_or(400);
    let net = load_network(&args.checkpoint)?;
    let files = list_images(&args.images)?;
    create_out_dir(&out)?;

    let mut all = Vec::new();
    let mut rasters = Vec::new();
    for path in &files {
        let (image_id, raster, dets) = detect_image(&net, path, conf, nms_iou, top_k)?;
        all.push((image_id, dets));
        rasters.push(raster);
    }
    let report = count_cells(&all, conf);
    fs::write(out.join("report.csv"), report.to_csv())?;
    fs::write(out.join("report.txt"), report.to_text())?;
    write_detections_file(&out.join("detections.txt"), &all)?;

    if args.overlays {
        let overlay_dir = out.join("overlays");
        create_out_dir(&overlay_dir)?;
        for ((image_id, dets), raster) in all.iter().zip(&rasters) {
            let overlay = render_overlay(raster, dets, None, OverlayStyle::default());
            data::save_png(&overlay, &overlay_dir.join(format!("{image_id}.png")))?;
        }
    }
    print!("{}", report.to_text());
    println!("reports written to {}", out.display());
    Ok(())
}

fn command_eval(args: EvalArgs, cfg: &ConfigFile) -> CliResult<()> {
    let data_dir = args
        .data
        .clone()
        .or_else(|| cfg.path("data"))
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let out = resolve_out_dir(args.out, cfg, "eval_out");
    let conf = args.conf.or(cfg.get("conf")?).unwrap_or(0.5);
    let nms_iou = args.nms_iou.or(cfg.get("nms_iou")?).unwrap_or(0.45);
    let match_iou = args.match_iou.or(cfg.get("match_iou")?).unwrap_or(0.5);

    let net = load_network(&args.checkpoint)?;
    let samples = load_dataset(&data_dir)?;
    create_out_dir(&out)?;

    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    let mut truth_counts = [0usize; 3];
    for sample in &samples {
        let dets = net
            .forward_detect(&sample.raster.to_tensor(), conf, nms_iou, 400)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        predictions.push((sample.image_id.clone(), dets));
        for (class_id, _) in &sample.boxes {
            truth_counts[class_id - 1] += 1;
        }
        truths.push(crate::data::Annotation {
            image_id: sample.image_id.clone(),
            width: data::IMAGE_SIDE as u32,
            height: data::IMAGE_SIDE as u32,
            objects: sample
                .boxes
                .iter()
                .map(|&(class_id, bbox)| crate::data::ObjectLabel { class_id, bbox })
                .collect(),
        });
    }

    let predicted_report = count_cells(&predictions, conf);
    let truth_report = CountReport::from_counts(truth_counts);
    let count_eval = evaluate_counts(&predicted_report, &truth_report);
    let det_eval = evaluate_detections(&predictions, &truths, match_iou);

    let mut text = String::new();
    text.push_str("== predicted counts ==\n");
    text.push_str(&predicted_report.to_text());
    text.push_str("\n== truth counts ==\n");
    text.push_str(&truth_report.to_text());
    text.push_str("\n== count-ratio metric (primary) ==\n");
    text.push_str(&count_eval.to_text());
    text.push_str("\n== detection-matched metric (supplementary) ==\n");
    text.push_str(&det_eval.to_text());
    fs::write(out.join("eval.txt"), &text)?;
    fs::write(out.join("predicted_counts.csv"), predicted_report.to_csv())?;
    write_detections_file(&out.join("detections.txt"), &predictions)?;

    if args.overlays {
        let overlay_dir = out.join("overlays");
        create_out_dir(&overlay_dir)?;
        for (sample, (_, dets)) in samples.iter().zip(&predictions) {
            let truth = truths
                .iter()
                .find(|t| t.image_id == sample.image_id)
                .expect("truths built from the same samples");
            let overlay =
                render_overlay(&sample.raster, dets, Some(truth), OverlayStyle::default());
            data::save_png(&overlay, &overlay_dir.join(format!("{}.png", sample.image_id)))?;
        }
    }
    print!("{text}");
    println!("evaluation written to {}", out.display());
    Ok(())
}

fn command_ablation(args: AblationArgs, cfg: &ConfigFile) -> CliResult<()> {
    let data_dir = args
        .data
        .clone()
        .or_else(|| cfg.path("data"))
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.path("out"))
        .unwrap_or_else(|| PathBuf::from("ablation_curve.csv"));
    let epochs = args.epochs.or(cfg.get("epochs")?).unwrap_or(40);
    let seed = args.seed.or(cfg.get("seed")?).unwrap_or(1);
    let train_fraction = args
        .train_fraction
        .or(cfg.get("train_fraction")?)
        .unwrap_or(0.765);
    let split_seed = args.split_seed.or(cfg.get("split_seed")?).unwrap_or(11);

    let samples = load_dataset(&data_dir)?;
    let (train_set, val_set) = split_dataset(samples, train_fraction, split_seed);
    let outcome = run_count_regression_ablation(
        ModelConfig::default(),
        &train_set,
        &val_set,
        epochs,
        seed,
        AdamHyper::default(),
    )?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&out, outcome.csv())?;
    println!(
        "count-regression curve written to {} ({} records; constant-prediction baseline: train {:.4}, val {:.4})",
        out.display(),
        outcome.curve.len(),
        outcome.baseline_train,
        outcome.baseline_val
    );
    Ok(())
}

fn command_verify(args: VerifyArgs) -> CliResult<()> {
    let mut results = Vec::new();
    if matches!(args.suite, Suite::Grad | Suite::All) {
        results.extend(verify::grad_suite(args.seed, args.seeds));
    }
    if matches!(args.suite, Suite::Geom | Suite::All) {
        results.extend(verify::geom_suite(args.seed));
    }
    if matches!(args.suite, Suite::Aug | Suite::All) {
        results.extend(verify::aug_suite(args.seed, args.draws));
    }
    let mut all_pass = true;
    for r in &results {
        println!("{}", r.line());
        all_pass &= r.pass();
    }
    if all_pass {
        println!("all {} properties pass", results.len());
        Ok(())
    } else {
        Err(CliError::Numeric("verification failed".into()))
    }
}
