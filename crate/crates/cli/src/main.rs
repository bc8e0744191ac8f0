//! `boundseg` — operator CLI for the boundary-aware segmentation pipeline:
//! synth -> prepare -> train / lambda-search / multi-run -> evaluate /
//! trimap-report, plus backend-free parameter counting.
//!
//! Exit codes: 0 success, 1 validation error (arguments, config, schema),
//! 2 runtime failure.

mod config;
mod manifest;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use boundseg_core::data::{self, DatasetBundle};
use boundseg_core::evaluation::{self, TrimapMode};
use boundseg_core::graph::{build_graph, Architecture, ArchitectureConfig, TopologyKind};
use boundseg_core::phantom::{organ_occupancy, Arrangement, PhantomConfig};
use boundseg_core::training::{
    self as training, lambda_search, multi_run, predict_labels, train_full, LAMBDA_GRID,
};
use boundseg_core::volume::{LabelVolume, VolumeShape};
use boundseg_core::{io, Error as CoreError};

use config::{ConfigFile, ConfigOverrides};
use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "boundseg",
    version,
    about = "Boundary-aware 3D multi-organ segmentation pipeline",
    disable_help_subcommand = true
)]
struct Cli {
    /// Worker threads for data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print machine-readable JSON reports to stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset (volumes + manifest.json).
    Synth(SynthArgs),
    /// Crop, resample, and re-derive boundaries for a dataset.
    Prepare(PrepareArgs),
    /// Train one model and checkpoint the best-validation epoch.
    Train(TrainArgs),
    /// Grid-search the boundary-loss weight lambda.
    LambdaSearch(LambdaSearchArgs),
    /// Train several seeds and aggregate test metrics (mean and std).
    MultiRun(MultiRunArgs),
    /// Compare predicted label volumes against ground truth.
    Evaluate(EvaluateArgs),
    /// Trimap dice against band width (segmentation quality near borders).
    TrimapReport(TrimapReportArgs),
    /// Backend-free parameter counts and shape report per model variant.
    ParamCount(ParamCountArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (default: $BOUNDSEG_OUT_ROOT/synth or ./runs/synth).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cubic grid side in voxels.
    #[arg(long, default_value_t = 48)]
    shape: usize,
    #[arg(long, default_value_t = 8)]
    organs: usize,
    /// Additive Gaussian noise sigma.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Gaussian edge blur sigma (voxels); 0 = sharp organ edges.
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
    /// Per-organ intensity texture sigma.
    #[arg(long, default_value_t = 0.0)]
    intensity_sigma: f64,
    /// Override the per-axis organ radius range, e.g. 6:10.
    #[arg(long, value_parser = parse_range)]
    radii: Option<(f64, f64)>,
    /// Place organs as near-touching pairs with similar within-pair
    /// intensities (hard inter-organ boundaries).
    #[arg(long)]
    paired: bool,
    /// Within-pair intensity gap used with --paired.
    #[arg(long, default_value_t = 0.1)]
    pair_gap: f64,
    /// Print per-class occupancy statistics.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct PrepareArgs {
    /// Input dataset manifest (JSON list of {id, image_path, labels_path, bbox}).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Common target dimension per axis after resampling.
    #[arg(long, default_value_t = 144)]
    target: usize,
}

#[derive(Args, Clone)]
struct TrainCommonArgs {
    /// Prepared dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config file (JSON); missing sections are defaulted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    topo: Option<TopologyKind>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    base_features: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train/val/test sizes, e.g. 28:5:10.
    #[arg(long, value_parser = parse_splits)]
    splits: Option<[usize; 3]>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: TrainCommonArgs,
    /// Write argmax predictions for the test split.
    #[arg(long)]
    predictions: bool,
    /// Write an SVG of the validation-dice curve.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct LambdaSearchArgs {
    #[command(flatten)]
    common: TrainCommonArgs,
    /// Comma-separated grid (default 0,0.5,1,1.5,2).
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
}

#[derive(Args)]
struct MultiRunArgs {
    #[command(flatten)]
    common: TrainCommonArgs,
    #[arg(long, default_value_t = 5)]
    runs: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of predicted label volumes (`<id>_pred` or `<id>_labels`).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth dataset manifest (or directory containing manifest.json).
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated trimap band widths to evaluate.
    #[arg(long, value_delimiter = ',')]
    trimap: Option<Vec<usize>>,
    /// Compare trimap band masks instead of label agreement in the band.
    #[arg(long)]
    band_overlap_dice: bool,
    /// Isotropic voxel spacing (mm) applied to surface distances.
    #[arg(long)]
    spacing: Option<f64>,
    /// Also write a per-organ CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct TrimapReportArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated band widths.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 3, 5, 7, 9, 11])]
    widths: Vec<usize>,
    #[arg(long)]
    band_overlap_dice: bool,
    /// Write an SVG of the curve.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct ParamCountArgs {
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    topo: Option<TopologyKind>,
    /// Report all nine variants.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 9)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    base_features: usize,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    /// Input side length for the shape report.
    #[arg(long, default_value_t = 144)]
    input: usize,
}

fn parse_splits(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err("expected train:val:test".into());
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|e| format!("{e}"))?;
    }
    Ok(out)
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    Ok((
        lo.parse().map_err(|e| format!("{e}"))?,
        hi.parse().map_err(|e| format!("{e}"))?,
    ))
}

/// Validation failures exit 1; everything else that fails exits 2.
enum CliError {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Runtime(anyhow::Error::new(e))
    }
}

type CliResult<T> = Result<T, CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // unknown flags/subcommands print usage and exit 1
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let json = cli.json;
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args, json),
        Command::Prepare(args) => cmd_prepare(args, json),
        Command::Train(args) => cmd_train(args, json),
        Command::LambdaSearch(args) => cmd_lambda_search(args, json),
        Command::MultiRun(args) => cmd_multi_run(args, json),
        Command::Evaluate(args) => cmd_evaluate(args, json),
        Command::TrimapReport(args) => cmd_trimap_report(args, json),
        Command::ParamCount(args) => cmd_param_count(args, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Output directory: explicit flag, else `$BOUNDSEG_OUT_ROOT/<command>`,
/// else `./runs/<command>`.
fn resolve_out(out: Option<PathBuf>, command: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var_os("BOUNDSEG_OUT_ROOT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(command)
    })
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(CliError::from)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .context("serializing report")
        .map_err(CliError::from)?;
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::from)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn cmd_synth(args: SynthArgs, json: bool) -> CliResult<()> {
    if args.count == 0 {
        return Err(validation("--count must be >= 1"));
    }
    let out = resolve_out(args.out, "synth");
    ensure_dir(&out)?;
    let mut cfg = PhantomConfig::for_shape(VolumeShape::cube(args.shape), args.organs, args.seed);
    cfg.noise_sigma = args.noise;
    cfg.edge_blur_sigma = args.blur;
    if args.paired {
        cfg.arrangement = Arrangement::AdjacentPairs;
        let pairs = args.organs.div_ceil(2);
        for (i, o) in cfg.organs.iter_mut().enumerate() {
            let base = 0.45 + 0.5 * (i / 2) as f64 / pairs.max(2) as f64;
            o.intensity_mean = base + args.pair_gap * (i % 2) as f64;
        }
    }
    for o in &mut cfg.organs {
        o.intensity_sigma = args.intensity_sigma;
        if let Some(r) = args.radii {
            o.radius_range = r;
        }
    }
    cfg.validate().map_err(|e| validation(e.to_string()))?;
    let manifest = data::synth_dataset(&cfg, args.count, &out)?;

    let mut run = RunManifest::new("synth", serde_json::to_value(&cfg).unwrap());
    for entry in &manifest {
        run.add_artifact(entry.image_path.clone());
        run.add_artifact(entry.labels_path.clone());
    }
    run.add_artifact("manifest.json");
    run.write(&out).map_err(CliError::from)?;

    let stats = if args.stats || json {
        let samples = data::load_samples(&out.join("manifest.json"), &manifest)?;
        let classes = samples[0].labels.num_classes();
        let mut mean = vec![0.0f64; classes];
        for s in &samples {
            for (m, occ) in mean.iter_mut().zip(organ_occupancy(&s.labels)) {
                *m += occ / samples.len() as f64;
            }
        }
        Some(mean)
    } else {
        None
    };
    if json {
        print_json(&serde_json::json!({
            "out": out,
            "count": args.count,
            "seed": args.seed,
            "occupancy": stats,
        }));
    } else {
        println!("wrote {} phantoms to {}", args.count, out.display());
        if let Some(mean) = stats {
            for (c, occ) in mean.iter().enumerate() {
                let name = if c == 0 { "background".into() } else { format!("organ{c}") };
                println!("  {name:<12} {:.4}", occ);
            }
        }
    }
    Ok(())
}

fn cmd_prepare(args: PrepareArgs, json: bool) -> CliResult<()> {
    if args.target == 0 {
        return Err(validation("--target must be >= 1"));
    }
    let out = resolve_out(args.out, "prepare");
    ensure_dir(&out)?;
    let manifest = data::load_manifest(&args.manifest)
        .map_err(|e| validation(format!("manifest: {e}")))?;
    let root = args.manifest.parent().unwrap_or_else(|| Path::new("."));
    let target = VolumeShape::cube(args.target);
    let mut out_manifest = data::Manifest::new();
    for entry in &manifest {
        let image = io::read_scalar(&root.join(&entry.image_path))?;
        let labels = io::read_labels(&root.join(&entry.labels_path))?;
        let bbox = entry
            .bbox
            .unwrap_or_else(|| boundseg_core::volume::BoundingBox::full(image.shape));
        let sample = data::prepare(&entry.id, &image, &labels, &bbox, target)?;
        let image_path = PathBuf::from(format!("{}_image", sample.id));
        let labels_path = PathBuf::from(format!("{}_labels", sample.id));
        let boundary_path = PathBuf::from(format!("{}_boundary", sample.id));
        io::write_scalar(&out.join(&image_path), &sample.image)?;
        io::write_labels(&out.join(&labels_path), &sample.labels)?;
        io::write_mask(&out.join(&boundary_path), sample.boundary.shape, &sample.boundary.mask)?;
        out_manifest.push(data::ManifestEntry {
            id: sample.id.clone(),
            image_path,
            labels_path,
            bbox: None,
        });
    }
    data::save_manifest(&out.join("manifest.json"), &out_manifest)?;

    let mut run = RunManifest::new(
        "prepare",
        serde_json::json!({"manifest": args.manifest, "target": args.target}),
    );
    run.add_input(&args.manifest).map_err(CliError::from)?;
    run.add_artifact("manifest.json");
    run.write(&out).map_err(CliError::from)?;
    if json {
        print_json(&serde_json::json!({
            "out": out,
            "prepared": out_manifest.len(),
            "target": [args.target, args.target, args.target],
        }));
    } else {
        println!("prepared {} volumes into {}", out_manifest.len(), out.display());
    }
    Ok(())
}

/// Loads config + data and applies all pre-run validation.
fn setup_training(
    common: &TrainCommonArgs,
    out: &Path,
) -> CliResult<(ConfigFile, training::TrainConfig, DatasetBundle)> {
    let mut cfg_file = match &common.config {
        Some(path) => ConfigFile::load(path).map_err(validation)?,
        None => ConfigFile::default(),
    };
    let overrides = ConfigOverrides {
        arch: common.arch,
        topology: common.topo,
        lambda: common.lambda,
        base_features: common.base_features,
        depth: common.depth,
        learning_rate: common.learning_rate,
        batch_size: common.batch_size,
        epochs: common.epochs,
        seed: common.seed,
        splits: common.splits,
        split_seed: common.split_seed,
    };
    overrides.apply(&mut cfg_file);

    let manifest =
        data::load_manifest(&common.data).map_err(|e| validation(format!("manifest: {e}")))?;
    if manifest.is_empty() {
        return Err(validation("dataset manifest is empty"));
    }
    let samples = data::load_samples(&common.data, &manifest)?;
    let shape = samples[0].shape();

    let violations = cfg_file.validate(Some(shape));
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(validation(format!("invalid configuration:\n  {}", lines.join("\n  "))));
    }

    let ids: Vec<String> = manifest.iter().map(|e| e.id.clone()).collect();
    let [n_train, n_val, n_test] = cfg_file.data.splits;
    let split = data::make_splits(&ids, (n_train, n_val, n_test), cfg_file.data.split_seed)
        .map_err(|e| validation(e.to_string()))?;
    let bundle = DatasetBundle::new(samples, split)?;

    let mut train_cfg = cfg_file.to_train_config();
    train_cfg.checkpoint_dir = Some(out.join("checkpoint"));
    train_cfg.log_path = Some(out.join("log.jsonl"));
    Ok((cfg_file, train_cfg, bundle))
}

fn cmd_train(args: TrainArgs, json: bool) -> CliResult<()> {
    let out = resolve_out(args.common.out.clone(), "train");
    ensure_dir(&out)?;
    let (cfg_file, train_cfg, bundle) = setup_training(&args.common, &out)?;
    let (record, mut net) = train_full(&train_cfg, &bundle)?;
    write_json(&out.join("run_record.json"), &record)?;

    let mut run = RunManifest::new("train", serde_json::to_value(&cfg_file).unwrap());
    run.add_input(&args.common.data).map_err(CliError::from)?;
    if let Some(c) = &args.common.config {
        run.add_input(c).map_err(CliError::from)?;
    }
    run.add_artifact("run_record.json");
    run.add_artifact("log.jsonl");
    run.add_artifact("checkpoint");

    if args.predictions {
        let pred_dir = out.join("predictions");
        ensure_dir(&pred_dir)?;
        let class_table = bundle.class_table();
        for sample in bundle.test_samples() {
            let pred = predict_labels(&mut net, &sample.image, &class_table)?;
            io::write_labels(&pred_dir.join(format!("{}_pred", sample.id)), &pred)?;
        }
        run.add_artifact("predictions");
    }
    if args.plot {
        let series: Vec<(f64, f64)> =
            record.epochs.iter().map(|e| (e.epoch as f64, e.val_dice)).collect();
        let svg = plot::line_chart(
            "Validation dice per epoch",
            "epoch",
            "mean dice",
            &[("validation", series)],
        );
        std::fs::write(out.join("val_dice.svg"), svg)
            .context("writing plot")
            .map_err(CliError::from)?;
        run.add_artifact("val_dice.svg");
    }
    run.write(&out).map_err(CliError::from)?;

    if json {
        print_json(&record);
    } else {
        println!(
            "trained {} {} for {} epochs: best val dice {:.4} at epoch {}",
            train_cfg.arch.label(),
            train_cfg.topology.label(),
            record.epochs.len(),
            record.best_val_dice,
            record.best_epoch
        );
        println!("artifacts in {}", out.display());
    }
    Ok(())
}

fn cmd_lambda_search(args: LambdaSearchArgs, json: bool) -> CliResult<()> {
    let out = resolve_out(args.common.out.clone(), "lambda-search");
    ensure_dir(&out)?;
    let (cfg_file, train_cfg, bundle) = setup_training(&args.common, &out)?;
    let grid: Vec<f64> = args.grid.unwrap_or_else(|| LAMBDA_GRID.to_vec());
    if grid.iter().any(|&l| l < 0.0) {
        return Err(validation("lambda grid values must be >= 0"));
    }
    let search = lambda_search(&train_cfg, &grid, &bundle)?;
    write_json(&out.join("lambda_search.json"), &search)?;

    let mut run = RunManifest::new(
        "lambda-search",
        serde_json::json!({"config": cfg_file, "grid": grid}),
    );
    run.add_input(&args.common.data).map_err(CliError::from)?;
    run.add_artifact("lambda_search.json");
    run.write(&out).map_err(CliError::from)?;

    if json {
        print_json(&search);
    } else {
        println!("lambda    val dice");
        for row in &search.rows {
            println!("{:<9} {:.4}", row.lambda, row.best_val_dice);
        }
        println!("best lambda {} (std across grid {:.4})", search.best_lambda, search.dice_std);
    }
    Ok(())
}

fn cmd_multi_run(args: MultiRunArgs, json: bool) -> CliResult<()> {
    if args.runs == 0 {
        return Err(validation("--runs must be >= 1"));
    }
    let out = resolve_out(args.common.out.clone(), "multi-run");
    ensure_dir(&out)?;
    let (cfg_file, train_cfg, bundle) = setup_training(&args.common, &out)?;
    let report = multi_run(&train_cfg, &bundle, args.runs)?;
    write_json(&out.join("multi_run.json"), &report)?;
    std::fs::write(out.join("metrics.csv"), evaluation::report_to_csv(&report.metrics))
        .context("writing metrics.csv")
        .map_err(CliError::from)?;

    let mut run = RunManifest::new(
        "multi-run",
        serde_json::json!({"config": cfg_file, "runs": args.runs}),
    );
    run.add_input(&args.common.data).map_err(CliError::from)?;
    run.add_artifact("multi_run.json");
    run.add_artifact("metrics.csv");
    run.write(&out).map_err(CliError::from)?;

    if json {
        print_json(&report);
    } else {
        println!(
            "{} runs: val dice {:.4} +- {:.4}; test grand dice {:.4} +- {:.4}",
            args.runs,
            report.val_dice.mean,
            report.val_dice.std,
            report.metrics.grand.dice.mean,
            report.metrics.grand.dice.std
        );
        println!("artifacts in {}", out.display());
    }
    Ok(())
}

/// Loads ground-truth samples and matching predictions.
fn load_eval_pairs(
    pred_dir: &Path,
    gt: &Path,
) -> CliResult<Vec<(String, LabelVolume, LabelVolume)>> {
    let manifest_path = if gt.is_dir() { gt.join("manifest.json") } else { gt.to_path_buf() };
    let manifest =
        data::load_manifest(&manifest_path).map_err(|e| validation(format!("gt manifest: {e}")))?;
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for entry in &manifest {
        let gt_labels = io::read_labels(&root.join(&entry.labels_path))?;
        let mut pred_base = pred_dir.join(format!("{}_pred", entry.id));
        if !pred_base.with_extension("json").exists() {
            pred_base = pred_dir.join(format!("{}_labels", entry.id));
        }
        if !pred_base.with_extension("json").exists() {
            return Err(validation(format!(
                "no prediction for `{}` under {}",
                entry.id,
                pred_dir.display()
            )));
        }
        let pred = io::read_labels(&pred_base)?;
        out.push((entry.id.clone(), pred, gt_labels));
    }
    if out.is_empty() {
        return Err(validation("ground-truth manifest is empty"));
    }
    Ok(out)
}

fn cmd_evaluate(args: EvaluateArgs, json: bool) -> CliResult<()> {
    let out = resolve_out(args.out.clone(), "evaluate");
    ensure_dir(&out)?;
    let pairs = load_eval_pairs(&args.pred, &args.gt)?;
    let class_table = pairs[0].2.class_table.clone();
    let mode = if args.band_overlap_dice {
        TrimapMode::BandOverlap
    } else {
        TrimapMode::LabelAgreement
    };
    let mut subjects = Vec::new();
    for (id, pred, gt) in &pairs {
        subjects.push(evaluation::evaluate_subject(id, pred, gt, args.spacing)?);
    }
    let mut report = evaluation::aggregate(vec![subjects], &class_table)?;
    if let Some(widths) = &args.trimap {
        let refs: Vec<(&LabelVolume, &LabelVolume)> =
            pairs.iter().map(|(_, p, g)| (p, g)).collect();
        report.trimap = Some(evaluation::trimap_curve(&refs, widths, mode)?);
    }
    write_json(&out.join("metrics.json"), &report)?;
    if args.csv {
        std::fs::write(out.join("metrics.csv"), evaluation::report_to_csv(&report))
            .context("writing metrics.csv")
            .map_err(CliError::from)?;
    }

    let mut run = RunManifest::new(
        "evaluate",
        serde_json::json!({
            "pred": args.pred,
            "gt": args.gt,
            "trimap": args.trimap,
            "band_overlap_dice": args.band_overlap_dice,
            "spacing": args.spacing,
        }),
    );
    run.add_artifact("metrics.json");
    if args.csv {
        run.add_artifact("metrics.csv");
    }
    run.write(&out).map_err(CliError::from)?;

    if json {
        print_json(&report);
    } else {
        println!("{}", evaluation::report_to_csv(&report).trim_end());
        if let Some(points) = &report.trimap {
            println!("\ntrimap width -> mean dice");
            for p in points {
                println!("  {:<3} {:.4}", p.width, p.mean_dice);
            }
        }
        println!("report in {}", out.display());
    }
    Ok(())
}

fn cmd_trimap_report(args: TrimapReportArgs, json: bool) -> CliResult<()> {
    if args.widths.is_empty() {
        return Err(validation("--widths must not be empty"));
    }
    if args.widths.iter().any(|&w| w < 1) {
        return Err(validation("trimap widths must be >= 1"));
    }
    let out = resolve_out(args.out.clone(), "trimap-report");
    ensure_dir(&out)?;
    let pairs = load_eval_pairs(&args.pred, &args.gt)?;
    let mode = if args.band_overlap_dice {
        TrimapMode::BandOverlap
    } else {
        TrimapMode::LabelAgreement
    };
    let refs: Vec<(&LabelVolume, &LabelVolume)> = pairs.iter().map(|(_, p, g)| (p, g)).collect();
    let curve = evaluation::trimap_curve(&refs, &args.widths, mode)?;
    write_json(&out.join("trimap.json"), &curve)?;

    let mut run = RunManifest::new(
        "trimap-report",
        serde_json::json!({
            "pred": args.pred,
            "gt": args.gt,
            "widths": args.widths,
            "band_overlap_dice": args.band_overlap_dice,
        }),
    );
    run.add_artifact("trimap.json");
    if args.plot {
        let series: Vec<(f64, f64)> =
            curve.iter().map(|p| (p.width as f64, p.mean_dice)).collect();
        let svg = plot::line_chart(
            "Trimap dice vs band width",
            "band width (voxels)",
            "mean dice",
            &[("trimap", series)],
        );
        std::fs::write(out.join("trimap.svg"), svg)
            .context("writing plot")
            .map_err(CliError::from)?;
        run.add_artifact("trimap.svg");
    }
    run.write(&out).map_err(CliError::from)?;

    if json {
        print_json(&curve);
    } else {
        println!("width  mean dice");
        for p in &curve {
            println!("{:<6} {:.4}", p.width, p.mean_dice);
        }
    }
    Ok(())
}

fn cmd_param_count(args: ParamCountArgs, json: bool) -> CliResult<()> {
    let cfg = ArchitectureConfig {
        base_features: args.base_features,
        depth: args.depth,
        max_features: 256,
        region_classes: args.classes,
        boundary_channels: 1,
    };
    let variants: Vec<(Architecture, TopologyKind)> = if args.all {
        Architecture::ALL
            .into_iter()
            .flat_map(|a| TopologyKind::ALL.into_iter().map(move |t| (a, t)))
            .collect()
    } else {
        let arch = args.arch.ok_or_else(|| validation("--arch required (or use --all)"))?;
        let topo = args.topo.unwrap_or(TopologyKind::Baseline);
        if topo == TopologyKind::Baseline {
            vec![(arch, topo)]
        } else {
            vec![(arch, TopologyKind::Baseline), (arch, topo)]
        }
    };
    let input = VolumeShape::cube(args.input);
    let mut rows = Vec::new();
    for (arch, topo) in variants {
        let graph = build_graph(arch, topo, &cfg).map_err(|e| validation(e.to_string()))?;
        let params = graph.count_params();
        let baseline = build_graph(arch, TopologyKind::Baseline, &cfg)
            .map_err(|e| validation(e.to_string()))?
            .count_params();
        let shape_report = graph.infer_shapes(input).ok();
        rows.push(serde_json::json!({
            "arch": arch,
            "topology": topo,
            "label": format!("{}{}", arch.label(),
                if topo == TopologyKind::Baseline { String::new() } else { format!("-{}", topo.label()) }),
            "params": params,
            "params_millions": (params as f64 / 1e6 * 100.0).round() / 100.0,
            "delta_vs_baseline": params - baseline,
            "bottleneck": shape_report.as_ref().map(|r| {
                serde_json::json!({
                    "shape": r.bottleneck.shape.as_array(),
                    "channels": r.bottleneck.channels,
                })
            }),
        }));
    }
    if json {
        print_json(&rows);
    } else {
        println!("{:<28} {:>12} {:>8} {:>10}  bottleneck", "method", "params", "M", "delta");
        for row in &rows {
            let bn = row["bottleneck"]
                .as_object()
                .map(|b| {
                    format!(
                        "{}x{}x{} @ {}",
                        b["shape"][0], b["shape"][1], b["shape"][2], b["channels"]
                    )
                })
                .unwrap_or_else(|| format!("n/a for input {}", args.input));
            let params = row["params"].as_u64().unwrap();
            println!(
                "{:<28} {:>12} {:>8} {:>10}  {}",
                row["label"].as_str().unwrap(),
                params,
                format!("{:.2}M", params as f64 / 1e6),
                row["delta_vs_baseline"].as_u64().unwrap(),
                bn
            );
        }
    }
    Ok(())
}
