//! Command-line front end: `gen`, `train`, `eval` and `sweep`.
//!
//! Every flag has a same-named key (snake case) in the optional `--config`
//! JSON file; flags win over the file, the file wins over built-in defaults.
//! Exit codes: 0 success, 2 usage or validation failure, 3 numeric failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::data::{
    generate_dataset, load_coco_annotations, load_predictions, read_scenes, split_dataset, to_eval_images,
    write_scenes, LayoutConfig, SplitSpec,
};
use crate::detector::{load_checkpoint, save_checkpoint, GridSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, MetricsReport};
use crate::simloop::{
    ablate_strategies, evaluate_params, query_csv, strategy_csv, sweep_queries, sweep_threshold, threshold_csv,
    train_semisupervised, train_supervised, EvalSet, InferenceMode, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dualdet",
    version,
    about = "Dual-assignment semi-supervised table detection at desk scale"
)]
struct Cli {
    /// Master seed for generation, splitting, initialization and augmentation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file supplying any subset of the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset (JSON lines).
    Gen(GenArgs),
    /// Train a detector, supervised or semi-supervised.
    Train(TrainArgs),
    /// Compute metrics for a checkpoint or for COCO files.
    Eval(EvalArgs),
    /// Run a threshold, query-count or strategy ablation.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Sup,
    Semi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum InferenceKind {
    O2o,
    O2mNms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SweepKind {
    Tau,
    Queries,
    Strategy,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct ModelFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    burn_in_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    box_lr_scale: Option<f64>,
    #[arg(long)]
    ema_momentum: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// One-to-one grid as COLSxROWS.
    #[arg(long)]
    o2o_grid: Option<String>,
    /// One-to-many grid as COLSxROWS, or `none`.
    #[arg(long)]
    o2m_grid: Option<String>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    o2m_switch_fraction: Option<f64>,
    #[arg(long, value_enum)]
    inference: Option<InferenceKind>,
    #[arg(long)]
    nms_iou: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out scenes scored after every epoch.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// COCO annotation file.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// COCO results file.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    category_id: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    kind: Option<SweepKind>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
    /// Comma-separated thresholds for `--kind tau`.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    /// Comma-separated `O2O:O2M` grid pairs for `--kind queries`, e.g. `6x5:20x20,6x5:none`.
    #[arg(long)]
    grids: Option<String>,
    #[command(flatten)]
    model: ModelFlags,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    seed: Option<u64>,
    count: Option<usize>,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    eval_data: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    mode: Option<Mode>,
    labeled_fraction: Option<f64>,
    checkpoint: Option<PathBuf>,
    annotations: Option<PathBuf>,
    results: Option<PathBuf>,
    category_id: Option<u64>,
    kind: Option<SweepKind>,
    taus: Option<Vec<f64>>,
    grids: Option<String>,
    layout: Option<LayoutConfig>,
    epochs: Option<usize>,
    burn_in_epochs: Option<usize>,
    lr: Option<f64>,
    box_lr_scale: Option<f64>,
    ema_momentum: Option<f64>,
    tau: Option<f64>,
    omega: Option<f64>,
    k: Option<usize>,
    o2o_grid: Option<String>,
    o2m_grid: Option<String>,
    stages: Option<usize>,
    o2m_switch_fraction: Option<f64>,
    inference: Option<InferenceKind>,
    nms_iou: Option<f64>,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }
}

fn parse_grid(s: &str) -> Result<GridSpec> {
    s.parse()
        .map_err(|e: Error| Error::Validation(format!("bad grid {s:?}: {e}")))
}

fn parse_optional_grid(s: &str) -> Result<Option<GridSpec>> {
    if s.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_grid(s).map(Some)
    }
}

fn require<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Validation(format!("missing required --{flag}")))
}

/// Resolves training flags over the file over `base`.
fn train_config(flags: &ModelFlags, file: &RunConfig, seed: u64, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base;
    cfg.seed = seed;
    macro_rules! pick {
        ($field:ident) => {
            if let Some(v) = flags.$field.or(file.$field) {
                cfg.$field = v;
            }
        };
    }
    pick!(epochs);
    pick!(burn_in_epochs);
    pick!(lr);
    pick!(box_lr_scale);
    pick!(ema_momentum);
    pick!(tau);
    pick!(omega);
    pick!(k);
    pick!(stages);
    pick!(o2m_switch_fraction);
    if let Some(g) = flags.o2o_grid.as_ref().or(file.o2o_grid.as_ref()) {
        cfg.o2o_grid = parse_grid(g)?;
    }
    if let Some(g) = flags.o2m_grid.as_ref().or(file.o2m_grid.as_ref()) {
        cfg.o2m_grid = parse_optional_grid(g)?;
    }
    let nms_iou = flags.nms_iou.or(file.nms_iou);
    match flags.inference.or(file.inference) {
        Some(InferenceKind::O2o) => cfg.inference = InferenceMode::O2o,
        Some(InferenceKind::O2mNms) => {
            cfg.inference = InferenceMode::O2mNms {
                iou: nms_iou.unwrap_or(0.5),
            }
        }
        None => {
            if let (InferenceMode::O2mNms { iou }, Some(v)) = (&mut cfg.inference, nms_iou) {
                *iou = v;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(v)? + "\n"))
}

fn cmd_gen(args: &GenArgs, file: &RunConfig, seed: u64) -> Result<()> {
    let count = require(args.count.or(file.count), "count")?;
    if count == 0 {
        return Err(Error::Validation("--count must be >= 1".into()));
    }
    let out = require(args.out.clone().or_else(|| file.out.clone()), "out")?;
    let layout = file.layout.clone().unwrap_or_default();
    let scenes = generate_dataset(seed, count, &layout)?;
    write_scenes(&out, &scenes, Some(&layout), Some(seed))?;
    let boxes: usize = scenes.iter().map(|s| s.gt_boxes.len()).sum();
    println!("wrote {count} scenes with {boxes} table boxes to {}", out.display());
    Ok(())
}

fn load_eval_set(path: Option<&PathBuf>) -> Result<Option<EvalSet>> {
    path.map(|p| read_scenes(p).map(|s| EvalSet::new(&s))).transpose()
}

fn split_spec(fraction: Option<f64>, file: &RunConfig, seed: u64) -> Result<SplitSpec> {
    let spec = SplitSpec {
        labeled_fraction: fraction.or(file.labeled_fraction).unwrap_or(0.1),
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn cmd_train(args: &TrainArgs, file: &RunConfig, seed: u64) -> Result<()> {
    let cfg = train_config(&args.model, file, seed, TrainConfig::default())?;
    let mode = args.mode.or(file.mode).unwrap_or(Mode::Semi);
    let spec = split_spec(args.labeled_fraction, file, seed)?;
    let data = require(args.data.clone().or_else(|| file.data.clone()), "data")?;
    let out_dir = require(args.out_dir.clone().or_else(|| file.out_dir.clone()), "out-dir")?;
    let eval_path = args.eval_data.clone().or_else(|| file.eval_data.clone());

    let scenes = read_scenes(&data)?;
    let eval = load_eval_set(eval_path.as_ref())?;
    let split = split_dataset(&scenes, &spec)?;
    let outcome = match mode {
        Mode::Sup => train_supervised(&split.labeled, eval.as_ref(), &cfg)?,
        Mode::Semi => train_semisupervised(&split.labeled, &split.unlabeled, eval.as_ref(), &cfg)?,
    };

    ensure_dir(&out_dir)?;
    let run = json!({
        "mode": format!("{mode:?}").to_lowercase(),
        "labeled_fraction": spec.labeled_fraction,
        "data": data,
        "train": cfg.echo(),
    });
    let mut csv = format!("# mode={:?} labeled_fraction={}\n", mode, spec.labeled_fraction).to_lowercase();
    csv.push_str(&outcome.history.to_csv(&cfg));
    write_file(&out_dir.join("history.csv"), &csv)?;
    let mut history = outcome.history.to_json(&cfg);
    history["run"] = run.clone();
    write_json(&out_dir.join("history.json"), &history)?;
    save_checkpoint(&out_dir.join("checkpoint_burn_in.json"), &outcome.burn_in_student, &run)?;
    save_checkpoint(&out_dir.join("checkpoint_final.json"), &outcome.student, &run)?;
    if let Some(t) = &outcome.teacher {
        save_checkpoint(&out_dir.join("checkpoint_teacher.json"), t, &run)?;
    }

    let last = outcome.history.epochs.last().expect("at least one epoch");
    let map = last.eval_map.map_or_else(|| "n/a".to_string(), |m| format!("{m:.6}"));
    println!(
        "{:?} training: {} labeled / {} unlabeled scenes, {} epochs, final supervised loss {:.6}, pseudo-labels {}, final mAP {}",
        mode,
        split.labeled.len(),
        if mode == Mode::Semi { split.unlabeled.len() } else { 0 },
        cfg.epochs,
        last.supervised_loss,
        outcome.history.total_pseudo_labels(),
        map
    );
    Ok(())
}

fn write_metrics(out_dir: &Path, report: &MetricsReport, echo: &Value) -> Result<()> {
    ensure_dir(out_dir)?;
    let mut flat = report.to_flat_json();
    flat["config"] = echo.clone();
    write_json(&out_dir.join("metrics.json"), &flat)?;
    let mut csv = String::new();
    let _ = writeln!(csv, "# config: {echo}");
    csv.push_str(&report.to_csv());
    write_file(&out_dir.join("metrics.csv"), &csv)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "mAP {:.4}  AP50 {:.4}  AP75 {:.4}  AR_L {}",
        report.map,
        report.ap50,
        report.ap75,
        opt(report.ar_large)
    );
    for p in &report.prf {
        println!(
            "IoU {:.2}: P {:.4} R {:.4} F1 {:.4}",
            p.iou, p.precision, p.recall, p.f1
        );
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, file: &RunConfig, seed: u64) -> Result<()> {
    let out_dir = require(args.out_dir.clone().or_else(|| file.out_dir.clone()), "out-dir")?;
    let checkpoint = args.checkpoint.clone().or_else(|| file.checkpoint.clone());
    let annotations = args.annotations.clone().or_else(|| file.annotations.clone());
    let eval_cfg = EvalConfig::default();

    match (checkpoint, annotations) {
        (Some(ckpt), None) => {
            let data = require(args.data.clone().or_else(|| file.data.clone()), "data")?;
            let (params, stored) = load_checkpoint(&ckpt)?;
            // start from the training config stored with the checkpoint
            let base = stored
                .get("train")
                .and_then(|v| serde_json::from_value::<TrainConfig>(v.clone()).ok())
                .unwrap_or_default();
            let base_seed = base.seed;
            let cfg = train_config(&args.model, file, base_seed, base)?;
            let scenes = read_scenes(&data)?;
            let summary = evaluate_params(&params, &scenes, &cfg)?;
            let report = evaluate(&summary.images, &eval_cfg)?;
            let echo = json!({
                "checkpoint": ckpt,
                "data": data,
                "inference": cfg.inference,
                "o2o_grid": cfg.o2o_grid.to_string(),
                "o2m_grid": cfg.o2m_grid.map(|g| g.to_string()),
                "eval": eval_cfg,
            });
            write_metrics(&out_dir, &report, &echo)
        }
        (None, Some(ann)) => {
            let results = require(args.results.clone().or_else(|| file.results.clone()), "results")?;
            let category = args.category_id.or(file.category_id).unwrap_or(1);
            let gt = load_coco_annotations(&ann, category)?;
            if gt.skipped > 0 {
                log::warn!("skipped {} annotations of other categories", gt.skipped);
            }
            let preds = load_predictions(&results, &gt)?;
            let images = to_eval_images(&gt, &preds)?;
            let report = evaluate(&images, &eval_cfg)?;
            let echo = json!({
                "annotations": ann,
                "results": results,
                "category_id": category,
                "eval": eval_cfg,
                "seed": seed,
            });
            write_metrics(&out_dir, &report, &echo)
        }
        (Some(_), Some(_)) => Err(Error::Validation(
            "give either --checkpoint with --data or --annotations with --results, not both".into(),
        )),
        (None, None) => Err(Error::Validation(
            "need --checkpoint with --data, or --annotations with --results".into(),
        )),
    }
}

fn parse_grid_pairs(s: &str) -> Result<Vec<(GridSpec, Option<GridSpec>)>> {
    s.split(',')
        .map(|pair| {
            let (a, b) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Validation(format!("grid pair {pair:?} must look like 6x5:20x20")))?;
            Ok((parse_grid(a)?, parse_optional_grid(b)?))
        })
        .collect()
}

pub const DEFAULT_TAUS: [f64; 4] = [0.5, 0.6, 0.7, 0.8];
pub const DEFAULT_GRID_PAIRS: &str = "6x5:20x20,6x5:none,10x6:20x20";

fn cmd_sweep(args: &SweepArgs, file: &RunConfig, seed: u64) -> Result<()> {
    let kind = require(args.kind.or(file.kind), "kind")?;
    let cfg = train_config(&args.model, file, seed, TrainConfig::default())?;
    let spec = split_spec(args.labeled_fraction, file, seed)?;
    let data = require(args.data.clone().or_else(|| file.data.clone()), "data")?;
    let eval_path = require(args.eval_data.clone().or_else(|| file.eval_data.clone()), "eval-data")?;
    let out_dir = require(args.out_dir.clone().or_else(|| file.out_dir.clone()), "out-dir")?;

    let scenes = read_scenes(&data)?;
    let eval = EvalSet::new(&read_scenes(&eval_path)?);
    let split = split_dataset(&scenes, &spec)?;
    let header = format!("# kind={kind:?} labeled_fraction={}\n", spec.labeled_fraction).to_lowercase();
    let (name, body) = match kind {
        SweepKind::Tau => {
            let taus = args
                .taus
                .clone()
                .or_else(|| file.taus.clone())
                .unwrap_or(DEFAULT_TAUS.to_vec());
            let rows = sweep_threshold(&split.labeled, &split.unlabeled, &eval, &cfg, &taus)?;
            for r in &rows {
                println!(
                    "tau {:.2}: mAP {:.6}, pseudo-labels/iter {:.4}",
                    r.tau, r.final_map, r.mean_pseudo_per_iter
                );
            }
            ("sweep_tau.csv", threshold_csv(&rows, &cfg))
        }
        SweepKind::Queries => {
            let grids = args.grids.clone().or_else(|| file.grids.clone());
            let pairs = parse_grid_pairs(grids.as_deref().unwrap_or(DEFAULT_GRID_PAIRS))?;
            let rows = sweep_queries(&split.labeled, &split.unlabeled, &eval, &cfg, &pairs)?;
            for r in &rows {
                println!("N={} T={}: mAP {:.6}", r.n, r.t, r.final_map);
            }
            ("sweep_queries.csv", query_csv(&rows, &cfg))
        }
        SweepKind::Strategy => {
            let rows = ablate_strategies(&split.labeled, &split.unlabeled, &eval, &cfg)?;
            for r in &rows {
                println!(
                    "{:<8} mAP {:.6}, duplicates/GT {:.4}, NMS calls {}, {:.2}s",
                    r.strategy.name(),
                    r.map,
                    r.duplicate_rate,
                    r.nms_calls,
                    r.wall_time_secs
                );
            }
            ("sweep_strategy.csv", strategy_csv(&rows, &cfg))
        }
    };
    ensure_dir(&out_dir)?;
    write_file(&out_dir.join(name), &(header + &body))
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    let result = RunConfig::load(cli.config.as_deref()).and_then(|file| {
        let seed = cli.seed.or(file.seed).unwrap_or(0);
        match &cli.command {
            Command::Gen(a) => cmd_gen(a, &file, seed),
            Command::Train(a) => cmd_train(a, &file, seed),
            Command::Eval(a) => cmd_eval(a, &file, seed),
            Command::Sweep(a) => cmd_sweep(a, &file, seed),
        }
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
