//! Command-line surface over the detection library: simulate streams,
//! apply evolution transforms, pre-train models, run incremental
//! experiments, and evaluate score files.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure. Diagnostics go to standard error; artifacts are
//! deterministic so re-running a command reproduces outputs byte for
//! byte.

mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use cpsdetect::eval::{parse_scores_csv, scores_to_csv, Report};
use cpsdetect::pipeline::{pretrain, run_experiment, Mode, RunConfig, TaskOutput};
use cpsdetect::simulator::{evolve, simulate, EvolveMode, EvolveSpec, SimConfig};
use cpsdetect::ssm::save_checkpoint;
use cpsdetect::threshold::{compute_threshold, ScoreMemory};
use cpsdetect::timeseries::{load_csv, write_csv, Label, TimeSeries};

use config::{CliConfig, CONFIG_HELP};

#[derive(Parser)]
#[command(
    name = "cpsdetect",
    version,
    about = "Anomaly detection for evolving CPS time series",
    after_long_help = CONFIG_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a simulated CPS stream as CSV
    Simulate(SimulateArgs),
    /// Apply a remove/upgrade/mix evolution transform to a CSV series
    Evolve(EvolveArgs),
    /// Pre-train a model on a CSV series and write a checkpoint
    Train(TrainArgs),
    /// Run the incremental experiment over a task sequence
    Run(RunArgs),
    /// Compute the dynamic threshold and metrics from a scores CSV
    Eval(EvalArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Stream length in ticks
    #[arg(long = "T", value_name = "LEN")]
    t_len: Option<usize>,
    #[arg(long)]
    amp: Option<f64>,
    #[arg(long)]
    freq: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    u0: Option<f64>,
    #[arg(long)]
    meas_noise_std: Option<f64>,
    #[arg(long)]
    proc_noise_std: Option<f64>,
    #[arg(long)]
    anomaly_noise_std: Option<f64>,
    /// Label the first 100 offsets of each 1000-tick block anomalous
    #[arg(long)]
    inject_anomalies: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvolveArgs {
    /// Input CSV series
    #[arg(long)]
    input: PathBuf,
    /// remove | upgrade | mix
    #[arg(long)]
    mode: String,
    /// Number of channels the transform touches
    #[arg(long)]
    n_devices: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training CSV series
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(clap::Args)]
struct RunArgs {
    /// static | it | iadcps | all
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial training CSV
    #[arg(long)]
    initial: PathBuf,
    /// Comma-separated task CSVs, each split train/test by task_train_len
    #[arg(long, value_delimiter = ',', required = true)]
    tasks: Vec<PathBuf>,
    /// Output directory for reports, scores, densities, and checkpoints
    #[arg(long)]
    outdir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_name = "Z")]
    query_points: Option<usize>,
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mix_window: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    meta_lr: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    task_train_len: Option<usize>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Scores CSV (`t,score,label`)
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_name = "Z")]
    query_points: Option<usize>,
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report JSON output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional density-curve CSV dump (`grid,density`)
    #[arg(long)]
    pdf_out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Lib(cpsdetect::Error),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(e) if e.is_numerical() => 3,
            CliError::Lib(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<cpsdetect::Error> for CliError {
    fn from(e: cpsdetect::Error) -> Self {
        CliError::Lib(e)
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    let result = match cli.command {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Evolve(args) => cmd_evolve(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Eval(args) => cmd_eval(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let cfg = CliConfig::load(args.config.as_deref())?;
    let sim = SimConfig {
        t_len: args.t_len.unwrap_or(cfg.sim.t_len),
        amp: args.amp.unwrap_or(cfg.sim.amp),
        freq: args.freq.unwrap_or(cfg.sim.freq),
        u0: args.u0.unwrap_or(cfg.sim.u0),
        meas_noise_std: args.meas_noise_std.unwrap_or(cfg.sim.meas_noise_std),
        proc_noise_std: args.proc_noise_std.unwrap_or(cfg.sim.proc_noise_std),
        anomaly_noise_std: args.anomaly_noise_std.unwrap_or(cfg.sim.anomaly_noise_std),
        seed: args.seed.unwrap_or(cfg.sim.seed),
        inject_anomalies: args.inject_anomalies || cfg.sim.inject_anomalies,
    };
    let series = simulate(&sim)?;
    write_csv(&series, &args.out)?;
    eprintln!("wrote {} points to {}", series.len(), args.out.display());
    Ok(())
}

fn cmd_evolve(args: EvolveArgs) -> Result<(), CliError> {
    let mode: EvolveMode = args
        .mode
        .parse()
        .map_err(|e| CliError::Usage(format!("{e}")))?;
    let series = load_csv(&args.input)?;
    let spec = EvolveSpec {
        mode,
        n_devices: args.n_devices,
        seed: args.seed,
    };
    let evolved = evolve(&series, &spec)?;
    write_csv(&evolved, &args.out)?;
    eprintln!("wrote evolved series to {}", args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(window) = args.window {
        cfg.window = window;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    let series = load_csv(&args.data)?;
    let pre = pretrain(&series, &cfg.to_run_config())?;
    save_checkpoint(&pre.model, &args.out)?;
    eprintln!(
        "checkpoint written to {} (final training loss {:.6e}, frozen threshold {:.6})",
        args.out.display(),
        pre.epoch_losses.last().copied().unwrap_or(f64::NAN),
        pre.threshold.threshold
    );
    Ok(())
}

#[derive(Serialize)]
struct TaskArtifacts {
    task: usize,
    report: PathBuf,
    scores: PathBuf,
    pdf: PathBuf,
    roc: PathBuf,
    checkpoint: PathBuf,
}

#[derive(Serialize)]
struct ModeManifest {
    mode: String,
    mean_auc: Option<f64>,
    mean_f1: f64,
    tasks: Vec<TaskArtifacts>,
}

#[derive(Serialize)]
struct RunManifest {
    seed: u64,
    config: RunConfig,
    pretrain_report: Report,
    pretrain_threshold: f64,
    modes: Vec<ModeManifest>,
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut cfg_file = CliConfig::load(args.config.as_deref())?;
    apply_run_overrides(&mut cfg_file, &args);
    let cfg = cfg_file.to_run_config();

    let modes: Vec<Mode> = match args.mode.as_deref() {
        None => vec![cfg.mode],
        Some("all") => Mode::all().to_vec(),
        Some(name) => vec![name.parse().map_err(|e| CliError::Usage(format!("{e}")))?],
    };

    let initial = load_csv(&args.initial)?;
    let mut tasks = Vec::with_capacity(args.tasks.len());
    for path in &args.tasks {
        tasks.push(split_task(&load_csv(path)?, cfg.task_train_len, path)?);
    }

    std::fs::create_dir_all(&args.outdir).map_err(cpsdetect::Error::from)?;
    let result = run_experiment(&initial, &tasks, &modes, &cfg)?;

    let mut manifest_modes = Vec::new();
    for summary in &result.modes {
        let mode_dir = args.outdir.join(summary.mode.name());
        std::fs::create_dir_all(&mode_dir).map_err(cpsdetect::Error::from)?;
        let mut task_entries = Vec::new();
        for task in &summary.tasks {
            task_entries.push(write_task_artifacts(&mode_dir, task)?);
            for warning in &task.warnings {
                eprintln!(
                    "[{} task {}] warning: {warning}",
                    summary.mode.name(),
                    task.task_index
                );
            }
        }
        for (task, reason) in &summary.skipped {
            eprintln!("[{} task {task}] skipped: {reason}", summary.mode.name());
        }
        println!(
            "{}: mean AUC {} | mean F1 {:.4}",
            summary.mode.name(),
            summary
                .mean_auc
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "n/a".into()),
            summary.mean_f1
        );
        manifest_modes.push(ModeManifest {
            mode: summary.mode.name().to_string(),
            mean_auc: summary.mean_auc,
            mean_f1: summary.mean_f1,
            tasks: task_entries,
        });
    }

    let manifest = RunManifest {
        seed: cfg.seed,
        config: cfg.clone(),
        pretrain_report: result.pretrained.report.clone(),
        pretrain_threshold: result.pretrained.threshold.threshold,
        modes: manifest_modes,
    };
    let manifest_path = args.outdir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).map_err(cpsdetect::Error::from)?,
    )
    .map_err(cpsdetect::Error::from)?;
    eprintln!("manifest written to {}", manifest_path.display());
    Ok(())
}

fn apply_run_overrides(cfg: &mut CliConfig, args: &RunArgs) {
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.window {
        cfg.window = v;
    }
    if let Some(v) = args.delta {
        cfg.threshold.delta = v;
    }
    if let Some(v) = args.query_points {
        cfg.threshold.query_points = v;
    }
    if let Some(v) = args.memory {
        cfg.threshold.memory = v;
    }
    if let Some(v) = args.lambda {
        cfg.mixup.lambda = v;
    }
    if let Some(v) = args.mix_window {
        cfg.mixup.mix_window = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = args.meta_lr {
        cfg.train.meta_lr = v;
    }
    if let Some(v) = args.episodes {
        cfg.train.episodes = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.task_train_len {
        cfg.task_train_len = v;
    }
}

/// Split a task series into its train and test parts.
fn split_task(
    series: &TimeSeries,
    train_len: usize,
    path: &Path,
) -> Result<(TimeSeries, TimeSeries), CliError> {
    if series.len() <= train_len {
        return Err(CliError::Lib(cpsdetect::Error::TooFew {
            context: format!("points in task file {}", path.display()),
            needed: train_len + 1,
            got: series.len(),
        }));
    }
    let train = series.slice(0, train_len)?;
    let test = series.slice(train_len, series.len())?;
    Ok((train, test))
}

fn write_task_artifacts(mode_dir: &Path, task: &TaskOutput) -> Result<TaskArtifacts, CliError> {
    let k = task.task_index;
    let report_path = mode_dir.join(format!("task{k}_report.json"));
    let scores_path = mode_dir.join(format!("task{k}_scores.csv"));
    let pdf_path = mode_dir.join(format!("task{k}_pdf.csv"));
    let roc_path = mode_dir.join(format!("task{k}_roc.csv"));
    let ckpt_path = mode_dir.join(format!("task{k}_model.json"));
    std::fs::write(
        &report_path,
        serde_json::to_string(&task.report).map_err(cpsdetect::Error::from)?,
    )
    .map_err(cpsdetect::Error::from)?;
    std::fs::write(&scores_path, scores_to_csv(&task.scores)).map_err(cpsdetect::Error::from)?;
    std::fs::write(&pdf_path, task.kde.to_csv()).map_err(cpsdetect::Error::from)?;
    std::fs::write(&roc_path, task.report.roc_csv()).map_err(cpsdetect::Error::from)?;
    save_checkpoint(&task.model, &ckpt_path)?;
    Ok(TaskArtifacts {
        task: k,
        report: report_path,
        scores: scores_path,
        pdf: pdf_path,
        roc: roc_path,
        checkpoint: ckpt_path,
    })
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(args.config.as_deref())?;
    if let Some(v) = args.delta {
        cfg.threshold.delta = v;
    }
    if let Some(v) = args.query_points {
        cfg.threshold.query_points = v;
    }
    if let Some(v) = args.memory {
        cfg.threshold.memory = v;
    }
    let text = std::fs::read_to_string(&args.scores).map_err(cpsdetect::Error::from)?;
    let points = parse_scores_csv(&text)?;
    if points.is_empty() {
        return Err(CliError::Lib(cpsdetect::Error::EmptyInput(
            "scores file has no rows".into(),
        )));
    }
    // the memory bound applies exactly as it would in a live run
    let mut memory = ScoreMemory::new(cfg.threshold.memory);
    memory.push_scores(&points.iter().map(|p| p.score).collect::<Vec<f64>>());
    let kde = compute_threshold(&memory.scores(), &cfg.threshold)?;

    let retained = &points[points.len() - memory.len()..];
    let labels: Vec<Label> = retained.iter().map(|p| p.label).collect();
    let scores: Vec<f64> = retained.iter().map(|p| p.score).collect();
    let preds: Vec<bool> = scores.iter().map(|&s| kde.classify(s)).collect();
    let report = Report::build(&labels, &preds, &scores, kde.threshold)?;

    if let Some(pdf_path) = &args.pdf_out {
        std::fs::write(pdf_path, kde.to_csv()).map_err(cpsdetect::Error::from)?;
    }
    let json = serde_json::to_string(&report).map_err(cpsdetect::Error::from)?;
    match &args.out {
        Some(path) => std::fs::write(path, &json).map_err(cpsdetect::Error::from)?,
        None => println!("{json}"),
    }
    Ok(())
}
