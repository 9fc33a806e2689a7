//! Benchmark grids: plan files, resumable result logs, comparison tables and
//! the parameter/MAC profiler.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, resolve_dataset, PreparedData, Protocol, RawSeries, Variant};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, ModelKind};
use crate::trainer::{fit, DataIdentity, TrainConfig};

pub const RESULTS_HEADER: &str = "dataset,protocol,variant,model,L,T,seed,mse,mae,params,macs,epochs,seconds,status";
pub const RESULTS_FILE: &str = "results.csv";
pub const MEAN_SEED: &str = "mean";
pub const STATUS_OK: &str = "ok";

/// One grid cell: a dataset/model/shape combination run once per seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub dataset: String,
    /// Defaults to the dataset's standard protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    pub model: ModelKind,
    #[serde(rename = "L")]
    pub lookback: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seeds: Vec<u64>,
}

fn default_variant() -> Variant {
    Variant::Multivariate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    pub entries: Vec<PlanEntry>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl BenchPlan {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.seeds.is_empty() {
                return Err(Error::InvalidConfig(format!("plan entry {} has no seeds", describe(e))));
            }
            let distinct: HashSet<_> = e.seeds.iter().collect();
            if distinct.len() != e.seeds.len() {
                return Err(Error::InvalidConfig(format!("plan entry {} repeats a seed", describe(e))));
            }
            if !seen.insert(self.key(e)) {
                return Err(Error::InvalidConfig(format!("duplicate plan entry {}", describe(e))));
            }
        }
        Ok(())
    }

    fn key(&self, e: &PlanEntry) -> EntryKey {
        EntryKey {
            dataset: e.dataset.clone(),
            protocol: self.protocol(e).as_str().to_string(),
            variant: e.variant.as_str().to_string(),
            model: e.model.as_str().to_string(),
            lookback: e.lookback,
            horizon: e.horizon,
        }
    }

    pub fn dataset_path(&self, dataset: &str) -> PathBuf {
        resolve_dataset(dataset, self.data_dir.as_deref()).0
    }

    pub fn protocol(&self, e: &PlanEntry) -> Protocol {
        e.protocol.unwrap_or_else(|| resolve_dataset(&e.dataset, self.data_dir.as_deref()).1)
    }

    pub fn results_path(&self) -> PathBuf {
        self.output_dir.join(RESULTS_FILE)
    }
}

fn describe(e: &PlanEntry) -> String {
    format!("{}/{}/{}/L={}/T={}", e.dataset, e.variant, e.model, e.lookback, e.horizon)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct EntryKey {
    dataset: String,
    protocol: String,
    variant: String,
    model: String,
    lookback: usize,
    horizon: usize,
}

/// One row of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub protocol: String,
    pub variant: String,
    pub model: String,
    #[serde(rename = "L")]
    pub lookback: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// A seed, or `mean` for the across-seed average row.
    pub seed: String,
    pub mse: f64,
    pub mae: f64,
    pub params: usize,
    pub macs: u64,
    pub epochs: f64,
    pub seconds: f64,
    pub status: String,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    pub fn is_mean(&self) -> bool {
        self.seed == MEAN_SEED
    }

    fn key(&self) -> EntryKey {
        EntryKey {
            dataset: self.dataset.clone(),
            protocol: self.protocol.clone(),
            variant: self.variant.clone(),
            model: self.model.clone(),
            lookback: self.lookback,
            horizon: self.horizon,
        }
    }
}

/// Parses a results file. Malformed rows are skipped and described in the
/// second return value.
pub fn read_results(path: impl AsRef<Path>) -> Result<(Vec<RunResult>, Vec<String>)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    if header != RESULTS_HEADER {
        return Err(Error::Data(format!(
            "{}: unexpected header `{header}`, expected `{RESULTS_HEADER}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (i, rec) in reader.deserialize::<RunResult>().enumerate() {
        match rec {
            Ok(r) => rows.push(r),
            Err(e) => skipped.push(format!("row {}: {e}", i + 1)),
        }
    }
    Ok((rows, skipped))
}

/// Appends rows to the results file, writing the header on first use, and
/// flushes after each row.
pub struct ResultsWriter {
    file: fs::File,
    path: PathBuf,
}

impl ResultsWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if fresh {
            writeln!(file, "{RESULTS_HEADER}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self { file, path })
    }

    pub fn append(&mut self, row: &RunResult) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(row).map_err(|e| Error::Data(e.to_string()))?;
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        self.file.write_all(&bytes).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

struct Job {
    key: EntryKey,
    entry: PlanEntry,
    protocol: Protocol,
    seed: u64,
}

/// Trains and evaluates every (entry, seed) not already recorded as `ok` in
/// the results file, appending each row as it finishes, then appends mean
/// rows for entries whose seeds are all complete. Returns the rows written
/// by this call.
pub fn run_plan(plan: &BenchPlan) -> Result<Vec<RunResult>> {
    plan.validate()?;
    let mut raw: BTreeMap<String, Arc<RawSeries>> = BTreeMap::new();
    for e in &plan.entries {
        if !raw.contains_key(&e.dataset) {
            let path = plan.dataset_path(&e.dataset);
            if !path.is_file() {
                return Err(Error::Data(format!("dataset `{}` not found at {}", e.dataset, path.display())));
            }
            raw.insert(e.dataset.clone(), Arc::new(load_csv(&path)?));
        }
    }
    fs::create_dir_all(&plan.output_dir).map_err(|e| Error::io(&plan.output_dir, e))?;
    let results_path = plan.results_path();
    let existing = if results_path.is_file() {
        let (rows, skipped) = read_results(&results_path)?;
        for s in skipped {
            log::warn!("{}: skipping malformed {s}", results_path.display());
        }
        rows
    } else {
        Vec::new()
    };
    let done: HashSet<(EntryKey, String)> = existing
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| (r.key(), r.seed.clone()))
        .collect();

    let mut jobs = Vec::new();
    for e in &plan.entries {
        let key = plan.key(e);
        for &seed in &e.seeds {
            if !done.contains(&(key.clone(), seed.to_string())) {
                jobs.push(Job {
                    key: key.clone(),
                    entry: e.clone(),
                    protocol: plan.protocol(e),
                    seed,
                });
            }
        }
    }
    log::info!("{} runs pending, {} already complete", jobs.len(), done.len());

    let mut writer = ResultsWriter::open(&results_path)?;
    let mut written = Vec::new();
    let prepared: Mutex<HashMap<(String, Protocol, Variant), Arc<PreparedData>>> = Mutex::new(HashMap::new());
    let queue = Mutex::new(jobs.into_iter());
    let (tx, rx) = mpsc::channel::<RunResult>();
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..plan.workers {
            let tx = tx.clone();
            let (queue, prepared, raw) = (&queue, &prepared, &raw);
            scope.spawn(move || loop {
                let next = queue.lock().expect("queue lock").next();
                let Some(job) = next else { break };
                let row = run_job(&job, &plan.train, raw, prepared);
                if tx.send(row).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for row in rx {
            writer.append(&row)?;
            written.push(row);
        }
        Ok(())
    })?;

    let mut all = existing;
    all.extend(written.iter().cloned());
    let have_mean: HashSet<EntryKey> = all.iter().filter(|r| r.is_mean()).map(RunResult::key).collect();
    for e in &plan.entries {
        let key = plan.key(e);
        if e.seeds.len() < 2 || have_mean.contains(&key) {
            continue;
        }
        let seeds: HashSet<String> = e.seeds.iter().map(u64::to_string).collect();
        let mut rows: Vec<&RunResult> = all
            .iter()
            .filter(|r| r.is_ok() && r.key() == key && seeds.contains(&r.seed))
            .collect();
        rows.sort_by_key(|r| r.seed.parse::<u64>().unwrap_or(u64::MAX));
        rows.dedup_by(|a, b| a.seed == b.seed);
        if rows.len() == e.seeds.len() {
            let mean = mean_row(&rows);
            writer.append(&mean)?;
            written.push(mean);
        }
    }
    Ok(written)
}

fn mean_row(rows: &[&RunResult]) -> RunResult {
    let n = rows.len() as f64;
    let avg = |f: fn(&RunResult) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    RunResult {
        seed: MEAN_SEED.to_string(),
        mse: avg(|r| r.mse),
        mae: avg(|r| r.mae),
        epochs: avg(|r| r.epochs),
        seconds: avg(|r| r.seconds),
        status: STATUS_OK.to_string(),
        ..rows[0].clone()
    }
}

fn run_job(
    job: &Job,
    train: &TrainConfig,
    raw: &BTreeMap<String, Arc<RawSeries>>,
    prepared: &Mutex<HashMap<(String, Protocol, Variant), Arc<PreparedData>>>,
) -> RunResult {
    let e = &job.entry;
    let mut row = RunResult {
        dataset: job.key.dataset.clone(),
        protocol: job.key.protocol.clone(),
        variant: job.key.variant.clone(),
        model: job.key.model.clone(),
        lookback: e.lookback,
        horizon: e.horizon,
        seed: job.seed.to_string(),
        mse: 0.0,
        mae: 0.0,
        params: 0,
        macs: 0,
        epochs: 0.0,
        seconds: 0.0,
        status: STATUS_OK.to_string(),
    };
    let start = Instant::now();
    let outcome = (|| -> Result<_> {
        let series = &raw[&e.dataset];
        let pkey = (e.dataset.clone(), job.protocol, e.variant);
        let cached = prepared.lock().expect("cache lock").get(&pkey).cloned();
        let data = match cached {
            Some(d) => d,
            None => {
                let d = Arc::new(PreparedData::prepare(series, job.protocol, e.variant)?);
                prepared.lock().expect("cache lock").insert(pkey, d.clone());
                d
            }
        };
        let model = Model::new(ModelConfig::new(e.model, e.lookback, e.horizon, data.channels()))?;
        let cfg = TrainConfig { seed: job.seed, ..*train };
        let identity = DataIdentity {
            dataset: e.dataset.clone(),
            protocol: job.protocol,
            variant: e.variant,
            rows: series.len(),
        };
        let fitted = fit(&model, &data, &cfg, Some(identity))?;
        Ok((model.count_params(), model.count_macs(train.batch_size), fitted))
    })();
    row.seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((params, macs, fitted)) => {
            row.mse = fitted.test.mse;
            row.mae = fitted.test.mae;
            row.params = params;
            row.macs = macs;
            row.epochs = fitted.history.len() as f64;
            log::info!("{} seed {}: mse={:.4} mae={:.4}", describe(e), job.seed, row.mse, row.mae);
        }
        Err(err) => {
            log::warn!("{} seed {} failed: {err}", describe(e), job.seed);
            row.status = format!("failed: {err}");
        }
    }
    row
}

/// The shipped default grid: the four ETT datasets at L=336 over the four
/// long horizons, every model, both variants, three seeds.
pub fn default_grid_plan() -> BenchPlan {
    let mut entries = Vec::new();
    for dataset in ["etth1", "etth2", "ettm1", "ettm2"] {
        for variant in [Variant::Multivariate, Variant::Univariate] {
            for horizon in [96, 192, 336, 720] {
                for model in [ModelKind::Unettsf, ModelKind::Dlinear, ModelKind::Nlinear, ModelKind::Linear] {
                    entries.push(PlanEntry {
                        dataset: dataset.into(),
                        protocol: None,
                        variant,
                        model,
                        lookback: 336,
                        horizon,
                        seeds: vec![2021, 2022, 2023],
                    });
                }
            }
        }
    }
    BenchPlan {
        entries,
        output_dir: PathBuf::from("runs/default_grid"),
        data_dir: None,
        train: TrainConfig::default(),
        workers: 1,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerProfile {
    pub name: String,
    pub n_in: usize,
    pub n_out: usize,
    pub params: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProfileReport {
    pub config: ModelConfig,
    pub batch: usize,
    pub params: usize,
    /// Multiply-accumulates of the affine layers for one batch, counting
    /// each bias add as one.
    pub macs: u64,
    /// Additions spent in pooling or moving averages for one batch; not
    /// part of `macs`.
    pub pooling_adds: u64,
    pub layers: Vec<LayerProfile>,
}

pub fn profile(cfg: &ModelConfig, batch: usize) -> Result<ProfileReport> {
    let model = Model::new(*cfg)?;
    let layers = model
        .layers()
        .iter()
        .map(|l| LayerProfile {
            name: l.name.clone(),
            n_in: l.n_in,
            n_out: l.n_out,
            params: l.params(),
            macs: batch as u64 * l.macs_per_sample(),
        })
        .collect();
    Ok(ProfileReport {
        config: *cfg,
        batch,
        params: model.count_params(),
        macs: model.count_macs(batch),
        pooling_adds: batch as u64 * model.pooling_adds_per_sample(),
        layers,
    })
}

impl ProfileReport {
    pub fn summary_line(&self) -> String {
        format!("params={} macs={}", self.params, self.macs)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,n_in,n_out,params,macs\n");
        for l in &self.layers {
            let _ = writeln!(out, "{},{},{},{},{}", l.name, l.n_in, l.n_out, l.params, l.macs);
        }
        out
    }
}

/// Comparison table: one row per (dataset, variant, L, T), one column pair
/// per model.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub models: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Malformed or failed rows that were left out.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub variant: String,
    pub lookback: usize,
    pub horizon: usize,
    /// Parallel to [`Report::models`]; `None` where no result exists.
    pub cells: Vec<Option<ReportCell>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportCell {
    pub mse: f64,
    pub mae: f64,
    pub best_mse: bool,
    pub best_mae: bool,
}

pub fn report(results: impl AsRef<Path>) -> Result<Report> {
    let (rows, skipped) = read_results(results)?;
    Ok(build_report(&rows, skipped))
}

/// Uses each cell's mean row when present, else the average of its `ok`
/// per-seed rows. Every value equal to the row minimum is flagged.
pub fn build_report(results: &[RunResult], mut skipped: Vec<String>) -> Report {
    type Group = (String, String, usize, usize);
    let mut cells: BTreeMap<Group, BTreeMap<String, (Option<(f64, f64)>, Vec<(f64, f64)>)>> = BTreeMap::new();
    let mut models = BTreeSet::new();
    for r in results {
        if !r.is_ok() {
            skipped.push(format!("{}/{}/{}/T={} seed {}: {}", r.dataset, r.variant, r.model, r.horizon, r.seed, r.status));
            continue;
        }
        models.insert(r.model.clone());
        let slot = cells
            .entry((r.dataset.clone(), r.variant.clone(), r.lookback, r.horizon))
            .or_default()
            .entry(r.model.clone())
            .or_default();
        if r.is_mean() {
            slot.0 = Some((r.mse, r.mae));
        } else {
            slot.1.push((r.mse, r.mae));
        }
    }
    let order = |m: &String| ModelKind::ALL.iter().position(|k| k.as_str() == m).unwrap_or(usize::MAX);
    let mut models: Vec<String> = models.into_iter().collect();
    models.sort_by(|a, b| order(a).cmp(&order(b)).then_with(|| a.cmp(b)));

    let rows = cells
        .into_iter()
        .map(|((dataset, variant, lookback, horizon), by_model)| {
            let values: Vec<Option<(f64, f64)>> = models
                .iter()
                .map(|m| {
                    by_model.get(m).and_then(|(mean, seeds)| {
                        mean.or_else(|| {
                            (!seeds.is_empty()).then(|| {
                                let n = seeds.len() as f64;
                                (seeds.iter().map(|s| s.0).sum::<f64>() / n, seeds.iter().map(|s| s.1).sum::<f64>() / n)
                            })
                        })
                    })
                })
                .collect();
            let min_mse = values.iter().flatten().map(|v| v.0).fold(f64::INFINITY, f64::min);
            let min_mae = values.iter().flatten().map(|v| v.1).fold(f64::INFINITY, f64::min);
            ReportRow {
                dataset,
                variant,
                lookback,
                horizon,
                cells: values
                    .into_iter()
                    .map(|v| {
                        v.map(|(mse, mae)| ReportCell {
                            mse,
                            mae,
                            best_mse: mse == min_mse,
                            best_mae: mae == min_mae,
                        })
                    })
                    .collect(),
            }
        })
        .collect();
    Report { models, rows, skipped }
}

impl Report {
    /// Fixed-width text table; best values carry a trailing `*`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12} {:<12} {:>4} {:>4}", "dataset", "variant", "L", "T");
        for m in &self.models {
            let _ = write!(out, " | {:>9} {:>9}", format!("{m} mse"), "mae");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<12} {:<12} {:>4} {:>4}", r.dataset, r.variant, r.lookback, r.horizon);
            for c in &r.cells {
                match c {
                    Some(c) => {
                        let mse = format!("{:.4}{}", c.mse, if c.best_mse { "*" } else { "" });
                        let mae = format!("{:.4}{}", c.mae, if c.best_mae { "*" } else { "" });
                        let _ = write!(out, " | {mse:>9} {mae:>9}");
                    }
                    None => {
                        let _ = write!(out, " | {:>9} {:>9}", "-", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,variant,L,T,model,mse,mae,best_mse,best_mae\n");
        for r in &self.rows {
            for (m, c) in self.models.iter().zip(&r.cells) {
                if let Some(c) = c {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{m},{},{},{},{}",
                        r.dataset, r.variant, r.lookback, r.horizon, c.mse, c.mae, c.best_mse, c.best_mae
                    );
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, seed: &str, mse: f64) -> RunResult {
        RunResult {
            dataset: "etth1".into(),
            protocol: "ett_hourly".into(),
            variant: "multivariate".into(),
            model: model.into(),
            lookback: 336,
            horizon: 96,
            seed: seed.into(),
            mse,
            mae: mse + 0.1,
            params: 1,
            macs: 1,
            epochs: 3.0,
            seconds: 1.0,
            status: STATUS_OK.into(),
        }
    }

    #[test]
    fn profile_census() {
        let p = profile(&ModelConfig::new(ModelKind::Unettsf, 336, 96, 7), 32).unwrap();
        assert_eq!(p.summary_line(), "params=424256 macs=13576192");
        assert_eq!(p.layers.len(), 7 * 7);
        assert_eq!(p.layers.iter().map(|l| l.params).sum::<usize>(), p.params);
        assert_eq!(p.layers.iter().map(|l| l.macs).sum::<u64>(), p.macs);
        let d = profile(&ModelConfig::new(ModelKind::Dlinear, 336, 96, 7), 32).unwrap();
        assert_eq!((d.params, d.macs), (452_928, 14_493_696));
        let l = profile(&ModelConfig::new(ModelKind::Linear, 336, 96, 1).shared(), 1).unwrap();
        assert_eq!(l.params, 336 * 96 + 96);
    }

    #[test]
    fn report_flags_lowest_and_ties() {
        let rows = vec![row("unettsf", "1", 0.3), row("linear", "1", 0.4)];
        let rep = build_report(&rows, vec![]);
        assert_eq!(rep.models, vec!["unettsf", "linear"]);
        let cells = &rep.rows[0].cells;
        assert!(cells[0].unwrap().best_mse && !cells[1].unwrap().best_mse);

        let tie = vec![row("unettsf", "1", 0.3), row("linear", "1", 0.3)];
        let rep = build_report(&tie, vec![]);
        assert!(rep.rows[0].cells.iter().all(|c| c.unwrap().best_mse));
    }

    #[test]
    fn report_prefers_mean_rows() {
        let rows = vec![row("linear", "1", 0.2), row("linear", "2", 0.4), row("linear", MEAN_SEED, 0.5)];
        assert_eq!(build_report(&rows, vec![]).rows[0].cells[0].unwrap().mse, 0.5);
        let rows = vec![row("linear", "1", 0.25), row("linear", "2", 0.75)];
        assert_eq!(build_report(&rows, vec![]).rows[0].cells[0].unwrap().mse, 0.5);
    }

    #[test]
    fn empty_report_has_header() {
        let rep = build_report(&[], vec![]);
        assert!(rep.rows.is_empty());
        assert!(rep.to_text().starts_with("dataset"));
        assert_eq!(rep.to_csv().lines().count(), 1);
    }

    #[test]
    fn results_round_trip_and_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RESULTS_FILE);
        let mut w = ResultsWriter::open(&path).unwrap();
        let mut failed = row("nlinear", "3", 0.0);
        failed.status = "failed: data error: x, y".into();
        w.append(&row("linear", "1", 0.25)).unwrap();
        w.append(&failed).unwrap();
        drop(w);
        let mut text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(RESULTS_HEADER));
        text.push_str("etth1,ett_hourly,multivariate,linear,336,96,1,notanumber,0,1,1,1,1,ok\n");
        fs::write(&path, text).unwrap();
        let (rows, skipped) = read_results(&path).unwrap();
        assert_eq!(rows, vec![row("linear", "1", 0.25), failed]);
        assert_eq!(skipped.len(), 1);
        let rep = report(&path).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.skipped.len(), 2);
    }

    #[test]
    fn plan_validation() {
        let mut plan = default_grid_plan();
        assert_eq!(plan.entries.len(), 4 * 2 * 4 * 4);
        assert!(plan.validate().is_ok());
        let dup = plan.entries[0].clone();
        plan.entries.push(dup);
        assert!(plan.validate().unwrap_err().to_string().contains("duplicate"));
        let back: BenchPlan = serde_json::from_str(&default_grid_plan().to_json()).unwrap();
        assert_eq!(back, default_grid_plan());
    }
}
