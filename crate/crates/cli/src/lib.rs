//! The `unettsf` command line: train, eval, benchmark, profile and
//! decompose.
//!
//! Exit codes: 0 success, 1 output i/o failure, 2 configuration or usage
//! error, 3 data error, 4 training aborted, 5 checkpoint error. Failures
//! print one `error kind=... code=... message="..."` line to stderr.

pub mod config;
pub mod error;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unettsf::bench::{self, BenchPlan};
use unettsf::data::{load_csv, resolve_dataset, Partition, PreparedData, RawSeries, Variant};
use unettsf::fpn::{build_fpn, FpnConfig};
use unettsf::models::{Model, ModelConfig, ModelKind};
use unettsf::trainer::{evaluate, fit, load_checkpoint, save_checkpoint, DataIdentity, EpochRecord, Metrics};

pub use config::{ResolvedTrain, TrainOptions};
pub use error::CliError;

pub const CHECKPOINT_FILE: &str = "model.utsf";
pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "unettsf", version, about = "UnetTSF long-horizon forecasting: train, evaluate, benchmark, profile")]
pub struct Cli {
    /// Log progress to stderr (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, history.csv and config.json to the output directory
    Train(TrainCmd),
    /// Evaluate a checkpoint on one partition of its dataset
    Eval(EvalCmd),
    /// Run a benchmark plan and write its comparison report
    Benchmark(BenchmarkCmd),
    /// Print parameter and multiply-accumulate counts for a model configuration
    Profile(ProfileCmd),
    /// Write the pooled pyramid levels of one channel as CSV
    Decompose(DecomposeCmd),
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    /// Flat JSON file with any of the flag names below as keys; flags win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub options: TrainOptions,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    /// Checkpoint file written by `train`
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// Partition to score: train, val or test [default: test]
    #[arg(long, value_name = "NAME")]
    pub partition: Option<Partition>,

    /// Dataset name or CSV path [default: the dataset recorded in the checkpoint]
    #[arg(long, value_name = "NAME")]
    pub dataset: Option<String>,

    /// Dataset root [default: $UNETTSF_DATA_DIR, else ./data]
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,

    /// Metrics CSV to append to [default: metrics.csv next to the checkpoint]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkCmd {
    /// JSON plan file
    #[arg(long, value_name = "FILE")]
    pub plan: PathBuf,

    /// Concurrent runs [default: the plan's value, else 1]
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,

    /// Dataset root [default: the plan's value, else $UNETTSF_DATA_DIR, else ./data]
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,

    /// Only rebuild the report from the existing results file [default: false]
    #[arg(long)]
    pub report_only: bool,
}

#[derive(Debug, Args)]
pub struct ProfileCmd {
    /// Model: unettsf, linear, nlinear or dlinear [default: unettsf]
    #[arg(long, value_name = "KIND")]
    pub model: Option<ModelKind>,

    /// Channels [default: 7]
    #[arg(long = "C", value_name = "N")]
    pub channels: Option<usize>,

    /// Look-back window length [default: 336]
    #[arg(long = "L", value_name = "N")]
    pub lookback: Option<usize>,

    /// Forecast horizon [default: 96]
    #[arg(long = "T", value_name = "N")]
    pub horizon: Option<usize>,

    /// Batch size the MAC count is reported for [default: 32]
    #[arg(long, value_name = "N")]
    pub batch: Option<usize>,

    /// Pyramid stages for unettsf [default: 4]
    #[arg(long, value_name = "N")]
    pub stages: Option<usize>,

    /// One parameter set per channel (false shares one set) [default: true]
    #[arg(long, value_name = "BOOL")]
    pub individual: Option<bool>,

    /// Moving-average kernel for dlinear [default: 25]
    #[arg(long, value_name = "N")]
    pub ma_kernel: Option<usize>,

    /// Also print the per-layer breakdown as CSV [default: false]
    #[arg(long)]
    pub breakdown: bool,
}

#[derive(Debug, Args)]
pub struct DecomposeCmd {
    /// Input CSV (`date` column first)
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Pyramid levels to compute [default: 4]
    #[arg(long, value_name = "N")]
    pub stages: Option<usize>,

    /// Channel by column name or 0-based index [default: the last column]
    #[arg(long, value_name = "NAME|INDEX")]
    pub channel: Option<String>,

    /// First row of the slice to decompose [default: 0]
    #[arg(long, value_name = "ROW")]
    pub start: Option<usize>,

    /// Rows in the slice [default: to the end of the file]
    #[arg(long, value_name = "N")]
    pub len: Option<usize>,

    /// Output CSV [default: standard output]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code, printing failures to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::new(error::EXIT_CONFIG, "usage", first).line());
            return ExitCode::from(error::EXIT_CONFIG);
        }
    };
    init_logging(cli.verbose);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli.command, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("{}", e.line());
            ExitCode::from(e.code)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Train(cmd) => {
            let summary = cmd_train(cmd.config.as_deref(), cmd.options)?;
            writeln_out(
                out,
                format_args!(
                    "val_mse={} val_mae={} test_mse={} test_mae={} best_epoch={} epochs={} checkpoint={}",
                    summary.val.mse,
                    summary.val.mae,
                    summary.test.mse,
                    summary.test.mae,
                    summary.best_epoch,
                    summary.history.len(),
                    summary.checkpoint.display()
                ),
            )
        }
        Command::Eval(cmd) => {
            let m = cmd_eval(&cmd)?;
            writeln_out(out, format_args!("mse={} mae={}", m.mse, m.mae))
        }
        Command::Benchmark(cmd) => {
            let text = cmd_benchmark(&cmd)?;
            out.write_all(text.as_bytes()).map_err(|e| CliError::io(e.to_string()))
        }
        Command::Profile(cmd) => {
            let report = cmd_profile(&cmd)?;
            writeln_out(out, format_args!("{}", report.summary_line()))?;
            if cmd.breakdown {
                out.write_all(report.to_csv().as_bytes()).map_err(|e| CliError::io(e.to_string()))?;
            }
            Ok(())
        }
        Command::Decompose(cmd) => {
            let csv = cmd_decompose(&cmd)?;
            match &cmd.out {
                Some(path) => write_file(path, csv.as_bytes()),
                None => out.write_all(csv.as_bytes()).map_err(|e| CliError::io(e.to_string())),
            }
        }
    }
}

fn writeln_out(out: &mut dyn Write, args: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{args}").map_err(|e| CliError::io(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<RawSeries, CliError> {
    if !path.is_file() {
        return Err(CliError::data(format!("dataset file not found: {}", path.display())));
    }
    Ok(load_csv(path)?)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub resolved: ResolvedTrain,
    pub checkpoint: PathBuf,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub val: Metrics,
    pub test: Metrics,
}

/// Merges the config file with `flags`, trains, and writes the checkpoint,
/// `history.csv` and the resolved `config.json` into the output directory.
pub fn cmd_train(config: Option<&Path>, flags: TrainOptions) -> Result<TrainSummary, CliError> {
    let file = match config {
        Some(p) => TrainOptions::from_file(p)?,
        None => TrainOptions::default(),
    };
    let resolved = flags.over(file).resolve();
    let train_cfg = resolved.train_config();
    train_cfg.validate()?;
    resolved.model_config(1).validate()?;

    let path = resolved.dataset_path();
    let raw = load_dataset(&path)?;
    let data = PreparedData::prepare(&raw, resolved.protocol, resolved.variant)?;
    let model = Model::new(resolved.model_config(data.channels()))?;
    let identity = DataIdentity {
        dataset: resolved.dataset.clone(),
        protocol: resolved.protocol,
        variant: resolved.variant,
        rows: raw.len(),
    };
    let fitted = fit(&model, &data, &train_cfg, Some(identity))?;

    let dir = &resolved.out;
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    let ck_path = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ck_path, &fitted.checkpoint)?;
    let mut history = String::from("epoch,train_mse,val_mse\n");
    for r in &fitted.history {
        history.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, r.val_mse));
    }
    write_file(&dir.join(HISTORY_FILE), history.as_bytes())?;
    write_file(&dir.join(CONFIG_FILE), resolved.to_json().as_bytes())?;
    Ok(TrainSummary {
        resolved,
        checkpoint: ck_path,
        history: fitted.history,
        best_epoch: fitted.best_epoch,
        val: fitted.val,
        test: fitted.test,
    })
}

pub const METRICS_HEADER: &str = "checkpoint,dataset,partition,mse,mae";

/// Scores a checkpoint with its stored scaler and appends a row to the
/// metrics CSV.
pub fn cmd_eval(cmd: &EvalCmd) -> Result<Metrics, CliError> {
    let ck = load_checkpoint(&cmd.checkpoint).map_err(|e| CliError::checkpoint(e.to_string()))?;
    let partition = cmd.partition.unwrap_or(Partition::Test);
    let data_dir = config::resolve_data_dir(cmd.data_dir.clone());
    let dataset = match (&cmd.dataset, &ck.data) {
        (Some(d), _) => d.clone(),
        (None, Some(id)) => id.dataset.clone(),
        (None, None) => {
            return Err(CliError::config("checkpoint records no dataset; pass --dataset"));
        }
    };
    let (path, default_protocol) = resolve_dataset(&dataset, Some(&data_dir));
    let (protocol, variant) = match &ck.data {
        Some(id) => (id.protocol, id.variant),
        None => (default_protocol, Variant::Multivariate),
    };
    let raw = load_dataset(&path)?;
    let data = PreparedData::with_scaler(&raw, protocol, variant, ck.scaler.clone())?;
    let model = Model::new(ck.model).map_err(|e| CliError::checkpoint(e.to_string()))?;
    if data.channels() != ck.model.channels {
        return Err(CliError::data(format!(
            "checkpoint expects {} channels, {} has {}",
            ck.model.channels,
            path.display(),
            data.channels()
        )));
    }
    let metrics = evaluate(&model, &ck.params, &data, partition)?;

    let out = cmd.out.clone().unwrap_or_else(|| {
        cmd.checkpoint.parent().unwrap_or(Path::new(".")).join("metrics.csv")
    });
    let fresh = fs::metadata(&out).map(|m| m.len() == 0).unwrap_or(true);
    let mut text = if fresh { format!("{METRICS_HEADER}\n") } else { String::new() };
    text.push_str(&format!(
        "{},{},{},{},{}\n",
        csv_field(&cmd.checkpoint.display().to_string()),
        csv_field(&dataset),
        partition,
        metrics.mse,
        metrics.mae
    ));
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&out)
        .map_err(|e| CliError::io(format!("cannot open {}: {e}", out.display())))?;
    f.write_all(text.as_bytes())
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", out.display())))?;
    Ok(metrics)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs (or, with `--report-only`, only reports) a plan. Returns the text
/// table; `report.txt` and `report.csv` are written next to the results.
pub fn cmd_benchmark(cmd: &BenchmarkCmd) -> Result<String, CliError> {
    let mut plan = BenchPlan::load(&cmd.plan)?;
    if let Some(w) = cmd.workers {
        plan.workers = w;
    }
    if cmd.data_dir.is_some() {
        plan.data_dir = cmd.data_dir.clone();
    }
    if plan.data_dir.is_none() {
        plan.data_dir = Some(config::resolve_data_dir(None));
    }
    plan.validate()?;
    if !cmd.report_only {
        let rows = bench::run_plan(&plan)?;
        log::info!("{} result rows written", rows.len());
    }
    let results = plan.results_path();
    let report = if results.is_file() {
        bench::report(&results)?
    } else {
        bench::build_report(&[], Vec::new())
    };
    for s in &report.skipped {
        log::warn!("report skipped {s}");
    }
    let text = report.to_text();
    if plan.output_dir.is_dir() {
        write_file(&plan.output_dir.join("report.txt"), text.as_bytes())?;
        write_file(&plan.output_dir.join("report.csv"), report.to_csv().as_bytes())?;
    }
    Ok(text)
}

pub fn cmd_profile(cmd: &ProfileCmd) -> Result<bench::ProfileReport, CliError> {
    let mut cfg = ModelConfig::new(
        cmd.model.unwrap_or(ModelKind::Unettsf),
        cmd.lookback.unwrap_or(336),
        cmd.horizon.unwrap_or(96),
        cmd.channels.unwrap_or(7),
    );
    if let Some(s) = cmd.stages {
        cfg.fpn.stages = s;
    }
    if let Some(i) = cmd.individual {
        cfg.individual = i;
    }
    if let Some(k) = cmd.ma_kernel {
        cfg.ma_kernel = k;
    }
    let batch = cmd.batch.unwrap_or(32);
    if batch == 0 {
        return Err(CliError::config("batch must be >= 1"));
    }
    Ok(bench::profile(&cfg, batch)?)
}

/// CSV with a `t` column and one `level<i>` column per stage; deeper,
/// shorter levels leave their trailing cells empty.
pub fn cmd_decompose(cmd: &DecomposeCmd) -> Result<String, CliError> {
    let raw = load_dataset(&cmd.input)?;
    let channel = match &cmd.channel {
        None => raw.channels() - 1,
        Some(name) => match raw.column_index(name) {
            Some(i) => i,
            None => match name.parse::<usize>() {
                Ok(i) if i < raw.channels() => i,
                _ => {
                    return Err(CliError::config(format!(
                        "unknown channel `{name}`; columns are {}",
                        raw.columns.join(", ")
                    )))
                }
            },
        },
    };
    let series = raw.column(channel);
    let start = cmd.start.unwrap_or(0);
    let len = cmd.len.unwrap_or(series.len().saturating_sub(start));
    if start + len > series.len() || len == 0 {
        return Err(CliError::config(format!(
            "slice start={start} len={len} does not fit {} rows",
            series.len()
        )));
    }
    let fpn = FpnConfig::with_stages(cmd.stages.unwrap_or(4));
    let levels = build_fpn(&series[start..start + len], &fpn)?;
    let mut out = String::from("t");
    for i in 1..=fpn.stages {
        out.push_str(&format!(",level{i}"));
    }
    out.push('\n');
    for t in 0..len {
        out.push_str(&t.to_string());
        for level in levels.levels() {
            out.push(',');
            if let Some(v) = level.get(t) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    Ok(out)
}
