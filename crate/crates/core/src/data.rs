//! Benchmark CSV ingestion, train/val/test partitioning, z-score scaling and
//! sliding-window sampling.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Environment variable consulted for the dataset root.
pub const DATA_DIR_ENV: &str = "UNETTSF_DATA_DIR";

/// A loaded multivariate series: `N` rows (time steps) by `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub columns: Vec<String>,
    pub timestamps: Vec<String>,
    values: DenseMatrix,
}

impl RawSeries {
    pub fn new(name: impl Into<String>, columns: Vec<String>, timestamps: Vec<String>, values: DenseMatrix) -> Result<Self> {
        if columns.len() != values.cols() || timestamps.len() != values.rows() {
            return Err(Error::Data(format!(
                "series has {} columns / {} timestamps for a {}x{} value matrix",
                columns.len(),
                timestamps.len(),
                values.rows(),
                values.cols()
            )));
        }
        Ok(Self {
            name: name.into(),
            columns,
            timestamps,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values.iter_rows().map(|r| r[c]).collect()
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<RawSeries> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.channels()) {
            return Err(Error::Data(format!(
                "channel {bad} out of range for {} channels",
                self.channels()
            )));
        }
        let mut data = Vec::with_capacity(self.len() * channels.len());
        for row in self.values.iter_rows() {
            data.extend(channels.iter().map(|&c| row[c]));
        }
        RawSeries::new(
            self.name.clone(),
            channels.iter().map(|&c| self.columns[c].clone()).collect(),
            self.timestamps.clone(),
            DenseMatrix::new(self.len(), channels.len(), data)?,
        )
    }

    /// The forecasting target used for univariate runs: the last column
    /// (`OT` in the ETT files).
    pub fn target_only(&self) -> Result<RawSeries> {
        self.select_channels(&[self.channels() - 1])
    }

    /// Index of a column by header name.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Loads a `date,<channel>,<channel>,...` CSV. Rows and columns in error
/// messages are 1-based; row 1 is the first data row after the header and
/// column 1 is the date column.
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    if header.len() < 2 {
        return Err(Error::Data(format!("{}: no value columns after the date column", path.display())));
    }
    if header.get(0).map(str::trim) != Some("date") {
        return Err(Error::Data(format!(
            "{}: first column must be named `date`, found `{}`",
            path.display(),
            header.get(0).unwrap_or_default()
        )));
    }
    let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let width = header.len();

    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != width {
            return Err(Error::Data(format!(
                "{}: ragged row {row}: {} fields, header has {width}",
                path.display(),
                record.len()
            )));
        }
        timestamps.push(record[0].to_string());
        for (j, cell) in record.iter().enumerate().skip(1) {
            let value: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: unparseable cell at row {row}, column {}: {cell:?}",
                    path.display(),
                    j + 1
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "{}: missing or non-finite value at row {row}, column {}",
                    path.display(),
                    j + 1
                )));
            }
            data.push(value);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Data(format!("{}: empty file (header only)", path.display())));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let n = timestamps.len();
    RawSeries::new(name, columns, timestamps, DenseMatrix::new(n, width - 1, data)?)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(io) => Error::Data(format!("{}: {io}", path.display())),
        _ => Error::Data(format!("{}: {e}", path.display())),
    }
}

/// Partitioning convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// 12/4/4 months of hourly data.
    #[serde(rename = "ett_hourly")]
    EttHourly,
    /// Same months at 15-minute resolution.
    #[serde(rename = "ett_minute")]
    EttMinute,
    #[serde(rename = "ratio_7_1_2")]
    Ratio712,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::EttHourly => "ett_hourly",
            Protocol::EttMinute => "ett_minute",
            Protocol::Ratio712 => "ratio_7_1_2",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ett_hourly" => Ok(Protocol::EttHourly),
            "ett_minute" => Ok(Protocol::EttMinute),
            "ratio_7_1_2" => Ok(Protocol::Ratio712),
            other => Err(Error::InvalidConfig(format!(
                "unknown protocol `{other}` (expected ett_hourly, ett_minute or ratio_7_1_2)"
            ))),
        }
    }
}

/// Multivariate runs forecast all channels; univariate runs only the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Multivariate,
    Univariate,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Multivariate => "multivariate",
            Variant::Univariate => "univariate",
        }
    }

    pub fn apply(&self, series: &RawSeries) -> Result<RawSeries> {
        match self {
            Variant::Multivariate => Ok(series.clone()),
            Variant::Univariate => series.target_only(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multivariate" | "m" => Ok(Variant::Multivariate),
            "univariate" | "s" => Ok(Variant::Univariate),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant `{other}` (expected multivariate or univariate)"
            ))),
        }
    }
}

/// Where a known benchmark dataset lives under the data root, and how it is
/// partitioned.
pub fn dataset_file(name: &str) -> Option<(&'static str, Protocol)> {
    Some(match name.to_ascii_lowercase().as_str() {
        "etth1" => ("ETTh1.csv", Protocol::EttHourly),
        "etth2" => ("ETTh2.csv", Protocol::EttHourly),
        "ettm1" => ("ETTm1.csv", Protocol::EttMinute),
        "ettm2" => ("ETTm2.csv", Protocol::EttMinute),
        "traffic" => ("traffic.csv", Protocol::Ratio712),
        "electricity" => ("electricity.csv", Protocol::Ratio712),
        "weather" => ("weather.csv", Protocol::Ratio712),
        "ili" => ("national_illness.csv", Protocol::Ratio712),
        _ => return None,
    })
}

/// Resolves a dataset name (or a path to a CSV) against `data_dir`, falling
/// back to [`DATA_DIR_ENV`] and then `./data`.
pub fn resolve_dataset(name: &str, data_dir: Option<&Path>) -> (PathBuf, Protocol) {
    let root = data_dir
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"));
    match dataset_file(name) {
        Some((file, protocol)) => (root.join(file), protocol),
        None => {
            let p = PathBuf::from(name);
            let p = if p.is_absolute() || p.exists() { p } else { root.join(p) };
            (p, Protocol::Ratio712)
        }
    }
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits mean and population standard deviation over `rows`.
    pub fn fit(series: &RawSeries, rows: Range<usize>) -> Result<Self> {
        let c = series.channels();
        let n = rows.len();
        if n == 0 {
            return Err(Error::Data("cannot fit a scaler on zero rows".into()));
        }
        let mut mean = vec![0.0; c];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(series.values.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(series.values.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
        if let Some(ch) = std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::Data(format!(
                "zero variance in channel {ch} (`{}`) over the training rows",
                series.columns[ch]
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, series: &RawSeries) -> Result<RawSeries> {
        self.check(series)?;
        let mut values = series.values.clone();
        for r in 0..values.rows() {
            for ((v, m), s) in values.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        RawSeries::new(series.name.clone(), series.columns.clone(), series.timestamps.clone(), values)
    }

    pub fn invert(&self, series: &RawSeries) -> Result<RawSeries> {
        self.check(series)?;
        let mut values = series.values.clone();
        for r in 0..values.rows() {
            for (c, v) in values.row_mut(r).iter_mut().enumerate() {
                *v = self.invert_value(c, *v);
            }
        }
        RawSeries::new(series.name.clone(), series.columns.clone(), series.timestamps.clone(), values)
    }

    pub fn apply_value(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn invert_value(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }

    fn check(&self, series: &RawSeries) -> Result<()> {
        if series.channels() != self.mean.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} channels, series has {}",
                self.mean.len(),
                series.channels()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" | "valid" | "validation" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(Error::InvalidConfig(format!(
                "unknown partition `{other}` (expected train, val or test)"
            ))),
        }
    }
}

/// Target-row ranges of each partition plus the scaler fitted on train rows.
/// Windows of a partition may take their inputs from rows before its start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub protocol: Protocol,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub scaler: Scaler,
}

const ETT_HOURS_PER_MONTH: usize = 30 * 24;

pub fn partition_ranges(n: usize, protocol: Protocol) -> Result<[Range<usize>; 3]> {
    let ett = |per_month: usize| -> Result<[Range<usize>; 3]> {
        let b1 = 12 * per_month;
        let b2 = b1 + 4 * per_month;
        let b3 = b2 + 4 * per_month;
        if n < b3 {
            return Err(Error::Data(format!(
                "protocol {protocol} needs at least {b3} rows, series has {n}"
            )));
        }
        Ok([0..b1, b1..b2, b2..b3])
    };
    match protocol {
        Protocol::EttHourly => ett(ETT_HOURS_PER_MONTH),
        Protocol::EttMinute => ett(4 * ETT_HOURS_PER_MONTH),
        Protocol::Ratio712 => {
            let train = n * 7 / 10;
            let test = n * 2 / 10;
            let val = n - train - test;
            if train == 0 || val == 0 || test == 0 {
                return Err(Error::Data(format!("series of {n} rows is too short for a 7:1:2 split")));
            }
            Ok([0..train, train..train + val, train + val..n])
        }
    }
}

pub fn make_split(series: &RawSeries, protocol: Protocol) -> Result<SplitSpec> {
    let [train, val, test] = partition_ranges(series.len(), protocol)?;
    let scaler = Scaler::fit(series, train.clone())?;
    Ok(SplitSpec {
        protocol,
        train,
        val,
        test,
        scaler,
    })
}

impl SplitSpec {
    pub fn range(&self, partition: Partition) -> Range<usize> {
        match partition {
            Partition::Train => self.train.clone(),
            Partition::Val => self.val.clone(),
            Partition::Test => self.test.clone(),
        }
    }
}

pub fn apply_scaler(series: &RawSeries, spec: &SplitSpec) -> Result<RawSeries> {
    spec.scaler.apply(series)
}

pub fn invert_scaler(series: &RawSeries, spec: &SplitSpec) -> Result<RawSeries> {
    spec.scaler.invert(series)
}

/// One training/evaluation sample; `origin` is the first target row.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesWindow {
    pub input: DenseMatrix,
    pub target: DenseMatrix,
    pub origin: usize,
}

/// Valid target-start rows of a partition, ascending. A window needs `L`
/// rows of history and all `T` targets inside the partition.
pub fn window_origins(target_rows: Range<usize>, lookback: usize, horizon: usize) -> Range<usize> {
    let first = target_rows.start.max(lookback);
    let end = (target_rows.end + 1).saturating_sub(horizon);
    first..end.max(first)
}

pub fn extract_window(series: &RawSeries, origin: usize, lookback: usize, horizon: usize) -> TimeSeriesWindow {
    let c = series.channels();
    let mut input = DenseMatrix::zeros(c, lookback);
    let mut target = DenseMatrix::zeros(c, horizon);
    for (k, t) in (origin - lookback..origin).enumerate() {
        for (ch, &v) in series.values.row(t).iter().enumerate() {
            input.set(ch, k, v);
        }
    }
    for (k, t) in (origin..origin + horizon).enumerate() {
        for (ch, &v) in series.values.row(t).iter().enumerate() {
            target.set(ch, k, v);
        }
    }
    TimeSeriesWindow { input, target, origin }
}

pub fn iter_windows<'a>(
    series: &'a RawSeries,
    spec: &SplitSpec,
    partition: Partition,
    lookback: usize,
    horizon: usize,
) -> impl Iterator<Item = TimeSeriesWindow> + 'a {
    window_origins(spec.range(partition), lookback, horizon).map(move |o| extract_window(series, o, lookback, horizon))
}

/// A batch of windows laid out channel-major for the models: `inputs[c]` is
/// `B×L`, `targets[c]` is `B×T`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub inputs: Vec<DenseMatrix>,
    pub targets: Vec<DenseMatrix>,
    pub origins: Vec<usize>,
}

impl WindowBatch {
    pub fn gather(series: &RawSeries, origins: &[usize], lookback: usize, horizon: usize) -> Self {
        let c = series.channels();
        let b = origins.len();
        let mut inputs: Vec<DenseMatrix> = (0..c).map(|_| DenseMatrix::zeros(b, lookback)).collect();
        let mut targets: Vec<DenseMatrix> = (0..c).map(|_| DenseMatrix::zeros(b, horizon)).collect();
        for (i, &o) in origins.iter().enumerate() {
            for (k, t) in (o - lookback..o + horizon).enumerate() {
                let row = series.values.row(t);
                for ch in 0..c {
                    if k < lookback {
                        inputs[ch].set(i, k, row[ch]);
                    } else {
                        targets[ch].set(i, k - lookback, row[ch]);
                    }
                }
            }
        }
        Self {
            inputs,
            targets,
            origins: origins.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// A scaled series together with its split, ready for training.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub series: RawSeries,
    pub split: SplitSpec,
}

impl PreparedData {
    /// Applies the variant, partitions, fits the scaler and scales.
    pub fn prepare(raw: &RawSeries, protocol: Protocol, variant: Variant) -> Result<Self> {
        let selected = variant.apply(raw)?;
        let split = make_split(&selected, protocol)?;
        let series = apply_scaler(&selected, &split)?;
        Ok(Self { series, split })
    }

    /// Like [`PreparedData::prepare`] but scales with previously fitted
    /// statistics instead of refitting.
    pub fn with_scaler(raw: &RawSeries, protocol: Protocol, variant: Variant, scaler: Scaler) -> Result<Self> {
        let selected = variant.apply(raw)?;
        let [train, val, test] = partition_ranges(selected.len(), protocol)?;
        let series = scaler.apply(&selected)?;
        Ok(Self {
            series,
            split: SplitSpec {
                protocol,
                train,
                val,
                test,
                scaler,
            },
        })
    }

    pub fn origins(&self, partition: Partition, lookback: usize, horizon: usize) -> Range<usize> {
        window_origins(self.split.range(partition), lookback, horizon)
    }

    pub fn channels(&self) -> usize {
        self.series.channels()
    }
}
