//! Mini-batch Adam training with early stopping, split evaluation and the
//! checkpoint file format.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::data::{Partition, PreparedData, Protocol, RawSeries, Scaler, Variant, WindowBatch};
use crate::error::{CheckpointError, Error, Result};
use crate::models::{Mode, Model, ModelConfig, ModelParams, ParamDescriptor};
use crate::tensor::{adam_step, AdamConfig, AdamState, DenseMatrix, RNG_LABEL};

pub const DEFAULT_SEED: u64 = 2021;
const EVAL_CHUNK: usize = 256;
/// Mixed into the run seed for the shuffling stream so it never aliases the
/// initializer stream.
const SHUFFLE_STREAM: u64 = 0x5EED_5EED_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Halve the learning rate every epoch after the third.
    pub lr_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: DEFAULT_SEED,
            lr_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be positive and finite, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(format!(
                "batch_size, max_epochs and patience must be >= 1 (got {}, {}, {})",
                self.batch_size, self.max_epochs, self.patience
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::InvalidConfig(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_decay && epoch > 3 {
            self.lr * 0.5f64.powi((epoch - 3) as i32)
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_val_mse(&self) -> f64 {
        self.history[self.best_epoch - 1].val_mse
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Adam state for every parameter array of a model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            states: params.entries().iter().map(|e| AdamState::new(e.size())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[DenseMatrix], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.states.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameter arrays",
                grads.len(),
                self.states.len()
            )));
        }
        for ((entry, g), state) in params.entries_mut().iter_mut().zip(grads).zip(&mut self.states) {
            let name = entry.name.clone();
            adam_step(&name, entry.values_mut(), g.data(), state, cfg)?;
        }
        Ok(())
    }
}

/// Mean squared error of a batch over every (sample, channel, step) and the
/// gradient of that loss with respect to each channel's forecast.
pub fn batch_loss(outputs: &[DenseMatrix], targets: &[DenseMatrix]) -> Result<(f64, Vec<DenseMatrix>)> {
    if outputs.len() != targets.len() {
        return Err(Error::Shape(format!("{} outputs vs {} targets", outputs.len(), targets.len())));
    }
    let n: usize = outputs.iter().map(DenseMatrix::len).sum();
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let scale = 2.0 / n as f64;
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (o, t) in outputs.iter().zip(targets) {
        if o.shape() != t.shape() {
            return Err(Error::Shape(format!("output {:?} vs target {:?}", o.shape(), t.shape())));
        }
        let mut g = Vec::with_capacity(o.len());
        for (a, b) in o.data().iter().zip(t.data()) {
            let d = a - b;
            sum += d * d;
            g.push(scale * d);
        }
        grads.push(DenseMatrix::new(o.rows(), o.cols(), g)?);
    }
    Ok((sum / n as f64, grads))
}

/// One forward/backward/Adam update on `batch`. Returns the pre-update loss.
pub fn train_step(
    model: &Model,
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    batch: &WindowBatch,
    adam: &AdamConfig,
) -> Result<f64> {
    let pass = model.forward(params, &batch.inputs, Mode::Record, false)?;
    let (loss, grad_out) = batch_loss(&pass.outputs, &batch.targets)?;
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss {loss}")));
    }
    let grads = model.backward(params, &pass, &grad_out)?;
    optimizer.step(params, &grads.params, adam)?;
    Ok(loss)
}

pub fn train(model: &Model, data: &PreparedData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(model, data)?;
    let mc = model.config();
    let mut origins: Vec<usize> = data.origins(Partition::Train, mc.lookback, mc.horizon).collect();
    if origins.is_empty() {
        return Err(Error::Data(format!(
            "train partition has no windows for L={}, T={}",
            mc.lookback, mc.horizon
        )));
    }
    if data.origins(Partition::Val, mc.lookback, mc.horizon).is_empty() {
        return Err(Error::Data(format!(
            "validation partition has no windows for L={}, T={}",
            mc.lookback, mc.horizon
        )));
    }

    let mut params = model.init_params(cfg.seed);
    let mut optimizer = Optimizer::new(&params);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let adam = AdamConfig::with_lr(cfg.lr_at(epoch));
        origins.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (b, chunk) in origins.chunks(cfg.batch_size).enumerate() {
            let batch = WindowBatch::gather(&data.series, chunk, mc.lookback, mc.horizon);
            let loss = train_step(model, &mut params, &mut optimizer, &batch, &adam)
                .map_err(|e| with_context(e, epoch, b + 1))?;
            weighted += loss * chunk.len() as f64;
        }
        let train_mse = weighted / origins.len() as f64;
        let val_mse = evaluate(model, &params, data, Partition::Val)?.mse;
        if !val_mse.is_finite() {
            return Err(Error::Training(format!("epoch {epoch}: non-finite validation loss {val_mse}")));
        }
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
        log::info!("epoch {epoch}: train_mse={train_mse:.6} val_mse={val_mse:.6}");
        if best.as_ref().is_none_or(|(v, _, _)| val_mse < *v) {
            best = Some((val_mse, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Training(msg) => Error::Training(format!("epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}

fn check_data(model: &Model, data: &PreparedData) -> Result<()> {
    if data.channels() != model.config().channels {
        return Err(Error::Shape(format!(
            "model has {} channels, data has {}",
            model.config().channels,
            data.channels()
        )));
    }
    Ok(())
}

/// Standardized-scale MSE and MAE over every window of `partition`.
pub fn evaluate(model: &Model, params: &ModelParams, data: &PreparedData, partition: Partition) -> Result<Metrics> {
    check_data(model, data)?;
    let mc = model.config();
    let origins: Vec<usize> = data.origins(partition, mc.lookback, mc.horizon).collect();
    if origins.is_empty() {
        return Err(Error::Data(format!(
            "{partition} partition has no windows for L={}, T={}",
            mc.lookback, mc.horizon
        )));
    }
    evaluate_origins(model, params, &data.series, &origins)
}

pub fn evaluate_origins(model: &Model, params: &ModelParams, series: &RawSeries, origins: &[usize]) -> Result<Metrics> {
    let mc = model.config();
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut n = 0usize;
    for chunk in origins.chunks(EVAL_CHUNK) {
        let batch = WindowBatch::gather(series, chunk, mc.lookback, mc.horizon);
        let pass = model.forward(params, &batch.inputs, Mode::Inference, false)?;
        for (o, t) in pass.outputs.iter().zip(&batch.targets) {
            for (a, b) in o.data().iter().zip(t.data()) {
                let d = a - b;
                sq += d * d;
                abs += d.abs();
            }
            n += o.len();
        }
    }
    if n == 0 {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    Ok(Metrics {
        mse: sq / n as f64,
        mae: abs / n as f64,
    })
}

/// Where the training data came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataIdentity {
    pub dataset: String,
    pub protocol: Protocol,
    pub variant: Variant,
    pub rows: usize,
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"UTSF";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with everything needed to reproduce its forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scaler: Scaler,
    pub data: Option<DataIdentity>,
    pub rng: String,
    /// Keyed metrics such as `test_mse`; kept sorted for stable bytes.
    pub metrics: BTreeMap<String, f64>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    scaler: Scaler,
    data: Option<DataIdentity>,
    params: Vec<ParamDescriptor>,
    rng: String,
    metrics: BTreeMap<String, f64>,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, train: TrainConfig, scaler: Scaler, params: ModelParams) -> Self {
        Self {
            model,
            train,
            scaler,
            data: None,
            rng: RNG_LABEL.to_string(),
            metrics: BTreeMap::new(),
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model,
            train: self.train,
            scaler: self.scaler.clone(),
            data: self.data.clone(),
            params: self.params.descriptors(),
            rng: self.rng.clone(),
            metrics: self.metrics.clone(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(CheckpointError::Header(e.to_string())))?;
        let values = self.params.flatten();
        let mut out = Vec::with_capacity(16 + json.len() + 4 * values.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let magic: [u8; 4] = take(bytes, 0, 4, "magic")?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(take(bytes, 4, 4, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(take(bytes, 8, 8, "header length")?.try_into().unwrap());
        let header_len = usize::try_from(header_len)
            .map_err(|_| CheckpointError::Truncated(format!("header length {header_len} exceeds file")))?;
        let json = take(bytes, 16, header_len, "header")?;
        let header: Header = serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;

        let model = Model::new(header.model).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let expected = model.count_params();
        let declared: usize = header.params.iter().map(ParamDescriptor::size).sum();
        if declared != expected {
            return Err(CheckpointError::CountMismatch {
                expected,
                found: declared,
            });
        }
        if header.params != model.descriptors() {
            return Err(CheckpointError::Header(
                "parameter descriptors do not match the model configuration".into(),
            ));
        }
        let blob = &bytes[16 + header_len..];
        if blob.len() < 4 * expected {
            return Err(CheckpointError::Truncated(format!(
                "parameter blob holds {} bytes, {} needed",
                blob.len(),
                4 * expected
            )));
        }
        if blob.len() != 4 * expected {
            return Err(CheckpointError::CountMismatch {
                expected,
                found: blob.len() / 4,
            });
        }
        let values: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let params = ModelParams::from_flat(&header.params, &values).map_err(|e| CheckpointError::Header(e.to_string()))?;
        Ok(Self {
            model: header.model,
            train: header.train,
            scaler: header.scaler,
            data: header.data,
            rng: header.rng,
            metrics: header.metrics,
            params,
        })
    }
}

fn take<'a>(bytes: &'a [u8], at: usize, len: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
    at.checked_add(len)
        .and_then(|end| bytes.get(at..end))
        .ok_or_else(|| CheckpointError::Truncated(format!("file ends inside the {what} ({} bytes)", bytes.len())))
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

/// Outcome of [`fit`]: trained parameters rounded to checkpoint precision
/// with metrics measured on exactly those values.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub val: Metrics,
    pub test: Metrics,
}

/// Trains, rounds the best parameters to `f32` and evaluates them on the
/// validation and test partitions.
pub fn fit(model: &Model, data: &PreparedData, cfg: &TrainConfig, identity: Option<DataIdentity>) -> Result<FitResult> {
    let outcome = train(model, data, cfg)?;
    let mut params = outcome.params;
    params.quantize_f32();
    let val = evaluate(model, &params, data, Partition::Val)?;
    let test = evaluate(model, &params, data, Partition::Test)?;
    let mut checkpoint = Checkpoint::new(*model.config(), *cfg, data.split.scaler.clone(), params);
    checkpoint.data = identity;
    checkpoint.metrics = BTreeMap::from([
        ("best_epoch".to_string(), outcome.best_epoch as f64),
        ("epochs".to_string(), outcome.history.len() as f64),
        ("test_mae".to_string(), test.mae),
        ("test_mse".to_string(), test.mse),
        ("val_mae".to_string(), val.mae),
        ("val_mse".to_string(), val.mse),
    ]);
    Ok(FitResult {
        checkpoint,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_split, RawSeries};
    use crate::models::ModelKind;

    fn ramp_data(n: usize) -> PreparedData {
        let data: Vec<f64> = (0..n).map(|t| ((t as f64) * 0.37).sin() + 0.1 * (t % 5) as f64).collect();
        let series = RawSeries::new(
            "ramp",
            vec!["x".into()],
            (0..n).map(|t| t.to_string()).collect(),
            DenseMatrix::new(n, 1, data).unwrap(),
        )
        .unwrap();
        PreparedData::prepare(&series, Protocol::Ratio712, Variant::Multivariate).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { max_epochs: 5, patience: 6, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(1), 0.005);
        assert_eq!(cfg.lr_at(3), 0.005);
        assert_eq!(cfg.lr_at(4), 0.0025);
        assert_eq!(cfg.lr_at(6), 0.000625);
        let flat = TrainConfig { lr_decay: false, ..cfg };
        assert_eq!(flat.lr_at(50), 0.005);
    }

    #[test]
    fn hand_checked_metrics() {
        // series 0 1 2 3 4 with L=1, T=2: windows at origins 1 and 2.
        let series = RawSeries::new(
            "h",
            vec!["x".into()],
            (0..5).map(|t| t.to_string()).collect(),
            DenseMatrix::new(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap(),
        )
        .unwrap();
        let model = Model::new(ModelConfig::new(ModelKind::Linear, 1, 2, 1)).unwrap();
        let mut params = model.zero_params();
        params.get_mut("ch0.linear.bias").unwrap().values_mut().copy_from_slice(&[1.0, 1.0]);
        // targets (1,2) and (2,3), forecasts (1,1): errors 0,1,1,2
        let m = evaluate_origins(&model, &params, &series, &[1, 2]).unwrap();
        assert_eq!(m.mse, 6.0 / 4.0);
        assert_eq!(m.mae, 4.0 / 4.0);
    }

    #[test]
    fn zero_predictor_mse_is_target_power() {
        let data = ramp_data(400);
        let model = Model::new(ModelConfig::new(ModelKind::Linear, 8, 4, 1)).unwrap();
        let m = evaluate(&model, &model.zero_params(), &data, Partition::Train).unwrap();
        let origins: Vec<usize> = data.origins(Partition::Train, 8, 4).collect();
        let col = data.series.column(0);
        let mut sq = 0.0;
        for &o in &origins {
            sq += col[o..o + 4].iter().map(|v| v * v).sum::<f64>();
        }
        assert!((m.mse - sq / (4 * origins.len()) as f64).abs() < 1e-12);
        let again = evaluate(&model, &model.zero_params(), &data, Partition::Train).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn empty_partition_errors() {
        let data = ramp_data(100);
        let model = Model::new(ModelConfig::new(ModelKind::Linear, 30, 12, 1)).unwrap();
        assert!(matches!(evaluate(&model, &model.zero_params(), &data, Partition::Val), Err(Error::Data(_))));
    }

    #[test]
    fn learns_doubling_relation() {
        // Rows alternate x, 2x; odd-origin windows with L=1 map x to 2x.
        let n = 600;
        let mut state = 0x1234_5678_u64;
        let mut series_vals = Vec::with_capacity(n);
        for _ in 0..n / 2 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            series_vals.push(x);
            series_vals.push(2.0 * x);
        }
        let model = Model::new(ModelConfig::new(ModelKind::Linear, 1, 1, 1)).unwrap();
        let series = RawSeries::new(
            "double",
            vec!["x".into()],
            (0..n).map(|t| t.to_string()).collect(),
            DenseMatrix::new(n, 1, series_vals).unwrap(),
        )
        .unwrap();
        let split = make_split(&series, Protocol::Ratio712).unwrap();
        // Identity scaler keeps the relation exact.
        let split = crate::data::SplitSpec {
            scaler: Scaler { mean: vec![0.0], std: vec![1.0] },
            ..split
        };
        let data = PreparedData { series: series.clone(), split };
        let only_odd = |p: Partition| -> Vec<usize> {
            data.origins(p, 1, 1).filter(|o| o % 2 == 1).collect()
        };
        let mut params = model.init_params(7);
        let mut opt = Optimizer::new(&params);
        let adam = AdamConfig::with_lr(0.05);
        let train_origins = only_odd(Partition::Train);
        for _ in 0..50 {
            for chunk in train_origins.chunks(32) {
                let batch = WindowBatch::gather(&series, chunk, 1, 1);
                train_step(&model, &mut params, &mut opt, &batch, &adam).unwrap();
            }
        }
        let val = evaluate_origins(&model, &params, &series, &only_odd(Partition::Val)).unwrap();
        assert!(val.mse < 1e-3, "val mse {}", val.mse);
        let w = params.get("ch0.linear.weight").unwrap().values()[0];
        assert!((w - 2.0).abs() < 0.05, "w = {w}");
    }

    #[test]
    fn training_is_deterministic_and_returns_best_epoch() {
        let data = ramp_data(300);
        let model = Model::new(ModelConfig::new(ModelKind::Unettsf, 24, 8, 1).with_stages(2)).unwrap();
        let cfg = TrainConfig {
            max_epochs: 6,
            patience: 2,
            seed: 3,
            ..Default::default()
        };
        let a = train(&model, &data, &cfg).unwrap();
        let b = train(&model, &data, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        let min = a.history.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_val_mse(), min);
        assert_eq!(evaluate(&model, &a.params, &data, Partition::Val).unwrap().mse, min);
        let c = train(&model, &data, &TrainConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn zero_lr_step_is_noop() {
        let data = ramp_data(200);
        let model = Model::new(ModelConfig::new(ModelKind::Dlinear, 16, 4, 1).with_stages(1)).unwrap();
        let mut params = model.init_params(1);
        let before = params.clone();
        let mut opt = Optimizer::new(&params);
        let origins: Vec<usize> = data.origins(Partition::Train, 16, 4).take(32).collect();
        let batch = WindowBatch::gather(&data.series, &origins, 16, 4);
        train_step(&model, &mut params, &mut opt, &batch, &AdamConfig::with_lr(0.0)).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn repeated_batch_loss_non_increasing() {
        let data = ramp_data(300);
        let model = Model::new(ModelConfig::new(ModelKind::Linear, 24, 6, 1)).unwrap();
        let mut params = model.init_params(11);
        let mut opt = Optimizer::new(&params);
        let origins: Vec<usize> = data.origins(Partition::Train, 24, 6).take(32).collect();
        let batch = WindowBatch::gather(&data.series, &origins, 24, 6);
        let adam = AdamConfig::with_lr(1e-3);
        let mut last = f64::INFINITY;
        for _ in 0..6 {
            let loss = train_step(&model, &mut params, &mut opt, &batch, &adam).unwrap();
            assert!(loss <= last, "{loss} > {last}");
            last = loss;
        }
    }

    fn sample_checkpoint() -> Checkpoint {
        let cfg = ModelConfig::new(ModelKind::Unettsf, 24, 8, 2).with_stages(2);
        let model = Model::new(cfg).unwrap();
        let mut params = model.init_params(5);
        params.quantize_f32();
        let mut ck = Checkpoint::new(
            cfg,
            TrainConfig::default(),
            Scaler { mean: vec![0.5, -1.0], std: vec![2.0, 0.25] },
            params,
        );
        ck.metrics.insert("test_mse".into(), 0.123_456_789_012_345_67);
        ck.data = Some(DataIdentity {
            dataset: "synthetic".into(),
            protocol: Protocol::Ratio712,
            variant: Variant::Multivariate,
            rows: 100,
        });
        ck
    }

    #[test]
    fn checkpoint_round_trip_bits() {
        let ck = sample_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"UTSF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.flatten().iter().zip(ck.params.flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.utsf");
        let ck = sample_checkpoint();
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
        assert!(matches!(load_checkpoint(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn checkpoint_errors_are_distinct() {
        let bytes = sample_checkpoint().to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::VersionMismatch { found: 2, expected: 1 })
        ));

        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(CheckpointError::Truncated(_))));

        let mut bad = bytes.clone();
        bad.extend_from_slice(&[0; 4]);
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::CountMismatch { .. })));

        let mut bad = bytes.clone();
        bad[16] = b'#';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Header(_))));
    }

    #[test]
    fn header_with_wrong_shapes_is_count_mismatch() {
        let ck = sample_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[16..16 + header_len]).unwrap();
        // Claim a longer lookback than the parameters were built for.
        let edited = json.replacen("\"lookback\":24", "\"lookback\":26", 1);
        assert_ne!(edited, json);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(edited.len() as u64).to_le_bytes());
        out.extend_from_slice(edited.as_bytes());
        out.extend_from_slice(&bytes[16 + header_len..]);
        assert!(matches!(Checkpoint::from_bytes(&out), Err(CheckpointError::CountMismatch { .. })));
    }
}
