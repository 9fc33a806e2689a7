//! UnetTSF and the Linear / NLinear / DLinear baselines behind one
//! interface: configure, initialize, forward, backward, census.
//!
//! All models are channel-independent: every channel's window is mapped to
//! its forecast by the same layer structure, with either one parameter set
//! per channel (`individual`) or a single set shared by all channels.

mod decompose;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use decompose::moving_average_decompose;
pub use params::{ModelParams, ParamDescriptor, ParamEntry};

use crate::error::{Error, Result};
use crate::fpn::{level_lengths, FpnConfig};
use crate::tensor::{DenseMatrix, GradTape, Initializer, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Unettsf,
    Linear,
    Nlinear,
    Dlinear,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Unettsf,
        ModelKind::Dlinear,
        ModelKind::Nlinear,
        ModelKind::Linear,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Unettsf => "unettsf",
            ModelKind::Linear => "linear",
            ModelKind::Nlinear => "nlinear",
            ModelKind::Dlinear => "dlinear",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unettsf" => Ok(ModelKind::Unettsf),
            "linear" => Ok(ModelKind::Linear),
            "nlinear" => Ok(ModelKind::Nlinear),
            "dlinear" => Ok(ModelKind::Dlinear),
            other => Err(Error::InvalidConfig(format!(
                "unknown model `{other}` (expected unettsf, linear, nlinear or dlinear)"
            ))),
        }
    }
}

pub const DEFAULT_MA_KERNEL: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    #[serde(default)]
    pub fpn: FpnConfig,
    #[serde(default = "default_individual")]
    pub individual: bool,
    #[serde(default = "default_ma_kernel")]
    pub ma_kernel: usize,
}

fn default_individual() -> bool {
    true
}

fn default_ma_kernel() -> usize {
    DEFAULT_MA_KERNEL
}

impl ModelConfig {
    pub fn new(kind: ModelKind, lookback: usize, horizon: usize, channels: usize) -> Self {
        Self {
            kind,
            lookback,
            horizon,
            channels,
            fpn: FpnConfig::default(),
            individual: true,
            ma_kernel: DEFAULT_MA_KERNEL,
        }
    }

    pub fn with_stages(mut self, stages: usize) -> Self {
        self.fpn.stages = stages;
        self
    }

    pub fn shared(mut self) -> Self {
        self.individual = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "L, T and C must all be >= 1 (L={}, T={}, C={})",
                self.lookback, self.horizon, self.channels
            )));
        }
        match self.kind {
            ModelKind::Unettsf => {
                level_lengths(self.lookback, &self.fpn)
                    .map_err(|e| Error::InvalidConfig(format!("input pyramid (L={}): {e}", self.lookback)))?;
                level_lengths(self.horizon, &self.fpn)
                    .map_err(|e| Error::InvalidConfig(format!("output pyramid (T={}): {e}", self.horizon)))?;
            }
            ModelKind::Dlinear => {
                if self.ma_kernel == 0 || self.ma_kernel % 2 == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "moving-average kernel must be odd and >= 1, got {}",
                        self.ma_kernel
                    )));
                }
            }
            ModelKind::Linear | ModelKind::Nlinear => {}
        }
        Ok(())
    }

    /// Number of parameter sets (one per channel, or one shared).
    pub fn groups(&self) -> usize {
        if self.individual {
            self.channels
        } else {
            1
        }
    }
}

/// `[T, pooled_len(T), ...]`, the forecast length at each pyramid stage.
pub fn stage_output_lengths(horizon: usize, fpn: &FpnConfig) -> Result<Vec<usize>> {
    level_lengths(horizon, fpn)
}

/// One affine layer in the model's parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AffineLayer {
    pub name: String,
    pub n_in: usize,
    pub n_out: usize,
    /// Channels this layer is applied to per sample.
    pub applications: usize,
    #[serde(skip)]
    pub weight_slot: usize,
    #[serde(skip)]
    pub bias_slot: usize,
}

impl AffineLayer {
    pub fn params(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }

    /// Multiply-accumulates per sample; the bias add counts as one per output.
    pub fn macs_per_sample(&self) -> u64 {
        (self.params() * self.applications) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Predictor(usize),
    Fusion(usize),
    Seasonal,
    Trend,
    Linear,
}

impl Role {
    fn label(&self) -> String {
        match self {
            Role::Predictor(i) => format!("stage{i}.predictor"),
            Role::Fusion(i) => format!("stage{i}.fusion"),
            Role::Seasonal => "seasonal".into(),
            Role::Trend => "trend".into(),
            Role::Linear => "linear".into(),
        }
    }
}

/// Whether a forward pass keeps what backward needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Record,
}

/// Outputs of a batched forward pass: one `B×T` matrix per channel.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub outputs: Vec<DenseMatrix>,
    recording: Option<Recording>,
}

impl ForwardPass {
    pub fn is_recorded(&self) -> bool {
        self.recording.is_some()
    }
}

#[derive(Debug, Clone)]
struct Recording {
    tape: GradTape,
    inputs: Vec<Option<NodeId>>,
    outputs: Vec<NodeId>,
}

/// Reverse-mode gradients of a batch.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    /// Parallel to the entries of [`ModelParams`].
    pub params: Vec<DenseMatrix>,
    /// Per-channel gradient with respect to the input windows. Only
    /// formed when the pass was recorded with `input_grad` for a model whose
    /// input feeds the tape directly (unettsf, linear).
    pub inputs: Vec<Option<DenseMatrix>>,
}

/// A configured forecaster.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    roles: Vec<Role>,
    layers: Vec<AffineLayer>,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let roles_dims = layer_template(&cfg)?;
        let roles: Vec<Role> = roles_dims.iter().map(|(r, _, _)| *r).collect();
        let applications = if cfg.individual { 1 } else { cfg.channels };
        let mut layers = Vec::with_capacity(cfg.groups() * roles.len());
        for g in 0..cfg.groups() {
            let prefix = if cfg.individual {
                format!("ch{g}")
            } else {
                "shared".to_string()
            };
            for (role, n_in, n_out) in &roles_dims {
                let slot = 2 * layers.len();
                layers.push(AffineLayer {
                    name: format!("{prefix}.{}", role.label()),
                    n_in: *n_in,
                    n_out: *n_out,
                    applications,
                    weight_slot: slot,
                    bias_slot: slot + 1,
                });
            }
        }
        Ok(Self { cfg, roles, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn descriptors(&self) -> Vec<ParamDescriptor> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    ParamDescriptor {
                        name: format!("{}.weight", l.name),
                        shape: vec![l.n_out, l.n_in],
                    },
                    ParamDescriptor {
                        name: format!("{}.bias", l.name),
                        shape: vec![l.n_out],
                    },
                ]
            })
            .collect()
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut init = Initializer::new(seed);
        let mut entries = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            let (w, b) = init.affine(l.n_in, l.n_out);
            entries.push(ParamEntry::weight(format!("{}.weight", l.name), w));
            entries.push(ParamEntry::bias(format!("{}.bias", l.name), b));
        }
        ModelParams::new(entries).expect("layer names are unique")
    }

    pub fn zero_params(&self) -> ModelParams {
        let mut p = self.init_params(0);
        p.map_values(|_| 0.0);
        p
    }

    /// Checks that `params` has this model's layout.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let want = self.descriptors();
        let got = params.descriptors();
        if want != got {
            let first = want
                .iter()
                .zip(&got)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!(": expected {} {:?}, found {} {:?}", a.name, a.shape, b.name, b.shape))
                .unwrap_or_default();
            return Err(Error::Shape(format!(
                "parameter layout mismatch ({} entries expected, {} given){first}",
                want.len(),
                got.len()
            )));
        }
        Ok(())
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(AffineLayer::params).sum()
    }

    pub fn count_macs(&self, batch: usize) -> u64 {
        batch as u64 * self.layers.iter().map(AffineLayer::macs_per_sample).sum::<u64>()
    }

    /// Additions spent in pooling / moving averages per sample. Not part of
    /// the MAC figure.
    pub fn pooling_adds_per_sample(&self) -> u64 {
        let c = self.cfg.channels as u64;
        match self.cfg.kind {
            ModelKind::Unettsf => {
                let lengths = level_lengths(self.cfg.lookback, &self.cfg.fpn).unwrap_or_default();
                let k = self.cfg.fpn.kernel as u64;
                c * lengths.iter().skip(1).map(|&n| n as u64 * k).sum::<u64>()
            }
            ModelKind::Dlinear => c * (self.cfg.lookback * self.cfg.ma_kernel) as u64,
            ModelKind::Linear | ModelKind::Nlinear => 0,
        }
    }

    fn layer(&self, channel: usize, k: usize) -> &AffineLayer {
        let group = if self.cfg.individual { channel } else { 0 };
        &self.layers[group * self.roles.len() + k]
    }

    /// Forecast for a single `C×L` window, returned as `C×T`.
    pub fn predict(&self, params: &ModelParams, window: &DenseMatrix) -> Result<DenseMatrix> {
        if window.shape() != (self.cfg.channels, self.cfg.lookback) {
            return Err(Error::Shape(format!(
                "window is {:?}, model expects {}x{}",
                window.shape(),
                self.cfg.channels,
                self.cfg.lookback
            )));
        }
        let inputs: Vec<DenseMatrix> = window.iter_rows().map(DenseMatrix::row_vector).collect();
        let pass = self.forward(params, &inputs, Mode::Inference, false)?;
        let mut out = Vec::with_capacity(self.cfg.channels * self.cfg.horizon);
        for o in &pass.outputs {
            out.extend_from_slice(o.data());
        }
        DenseMatrix::new(self.cfg.channels, self.cfg.horizon, out)
    }

    /// Batched forward pass. `inputs[c]` holds channel `c` of every sample,
    /// one `L`-length window per row.
    pub fn forward(
        &self,
        params: &ModelParams,
        inputs: &[DenseMatrix],
        mode: Mode,
        input_grad: bool,
    ) -> Result<ForwardPass> {
        if inputs.len() != self.cfg.channels {
            return Err(Error::Shape(format!(
                "{} channel inputs given, model has {} channels",
                inputs.len(),
                self.cfg.channels
            )));
        }
        let rows = inputs[0].rows();
        for (c, x) in inputs.iter().enumerate() {
            if x.cols() != self.cfg.lookback || x.rows() != rows {
                return Err(Error::Shape(format!(
                    "channel {c} input is {:?}, expected {rows}x{}",
                    x.shape(),
                    self.cfg.lookback
                )));
            }
        }
        self.check_params(params)?;

        let mut tape = GradTape::new();
        let mut in_nodes = Vec::with_capacity(inputs.len());
        let mut out_nodes = Vec::with_capacity(inputs.len());
        for (c, x) in inputs.iter().enumerate() {
            let (input, out) = match self.cfg.kind {
                ModelKind::Unettsf => self.unettsf_channel(&mut tape, params, c, x, input_grad)?,
                ModelKind::Linear => {
                    let node = tape.leaf(x.clone(), input_grad);
                    let l = self.layer(c, 0);
                    (Some(node), tape.affine(node, params, l.weight_slot, l.bias_slot)?)
                }
                ModelKind::Nlinear => (None, self.nlinear_channel(&mut tape, params, c, x)?),
                ModelKind::Dlinear => (None, self.dlinear_channel(&mut tape, params, c, x)?),
            };
            in_nodes.push(input);
            out_nodes.push(out);
        }
        let outputs = out_nodes.iter().map(|&n| tape.value(n).clone()).collect();
        let recording = (mode == Mode::Record).then_some(Recording {
            tape,
            inputs: in_nodes,
            outputs: out_nodes,
        });
        Ok(ForwardPass { outputs, recording })
    }

    fn unettsf_channel(
        &self,
        tape: &mut GradTape,
        params: &ModelParams,
        c: usize,
        x: &DenseMatrix,
        input_grad: bool,
    ) -> Result<(Option<NodeId>, NodeId)> {
        let stages = self.cfg.fpn.stages;
        let pool = self.cfg.fpn.pool();
        let input = tape.leaf(x.clone(), input_grad);
        // pyramid
        let mut levels = Vec::with_capacity(stages);
        levels.push(input);
        for _ in 1..stages {
            let prev = *levels.last().unwrap();
            levels.push(tape.avgpool(prev, pool)?);
        }
        // per-stage predictors
        let mut preds = Vec::with_capacity(stages);
        for (i, &lvl) in levels.iter().enumerate() {
            let l = self.layer(c, i);
            preds.push(tape.affine(lvl, params, l.weight_slot, l.bias_slot)?);
        }
        // top-down fusion: refined = Linear(cat(refined_deeper, pred_here))
        let mut refined = preds[stages - 1];
        for (k, i) in (0..stages - 1).rev().enumerate() {
            let cat = tape.concat(refined, preds[i])?;
            let l = self.layer(c, stages + k);
            refined = tape.affine(cat, params, l.weight_slot, l.bias_slot)?;
        }
        Ok((Some(input), refined))
    }

    fn nlinear_channel(&self, tape: &mut GradTape, params: &ModelParams, c: usize, x: &DenseMatrix) -> Result<NodeId> {
        let (rows, l_len, t_len) = (x.rows(), self.cfg.lookback, self.cfg.horizon);
        let mut shifted = x.clone();
        let mut anchor = DenseMatrix::zeros(rows, t_len);
        for r in 0..rows {
            let last = x.get(r, l_len - 1);
            shifted.row_mut(r).iter_mut().for_each(|v| *v -= last);
            anchor.row_mut(r).fill(last);
        }
        let s = tape.leaf(shifted, false);
        let a = tape.leaf(anchor, false);
        let l = self.layer(c, 0);
        let y = tape.affine(s, params, l.weight_slot, l.bias_slot)?;
        tape.add(y, a)
    }

    fn dlinear_channel(&self, tape: &mut GradTape, params: &ModelParams, c: usize, x: &DenseMatrix) -> Result<NodeId> {
        let (rows, cols) = x.shape();
        let mut trend = Vec::with_capacity(rows * cols);
        let mut seasonal = Vec::with_capacity(rows * cols);
        for row in x.iter_rows() {
            let (t, s) = moving_average_decompose(row, self.cfg.ma_kernel)?;
            trend.extend(t);
            seasonal.extend(s);
        }
        let s = tape.leaf(DenseMatrix::new(rows, cols, seasonal)?, false);
        let t = tape.leaf(DenseMatrix::new(rows, cols, trend)?, false);
        let ls = self.layer(c, 0);
        let lt = self.layer(c, 1);
        let ys = tape.affine(s, params, ls.weight_slot, ls.bias_slot)?;
        let yt = tape.affine(t, params, lt.weight_slot, lt.bias_slot)?;
        tape.add(ys, yt)
    }

    /// Exact reverse-mode gradients for a recorded pass. `grad_outputs[c]`
    /// is the upstream gradient of channel `c`'s forecast.
    pub fn backward(
        &self,
        params: &ModelParams,
        pass: &ForwardPass,
        grad_outputs: &[DenseMatrix],
    ) -> Result<ModelGrads> {
        let rec = pass
            .recording
            .as_ref()
            .ok_or_else(|| Error::Usage("backward needs a forward pass run with Mode::Record".into()))?;
        if grad_outputs.len() != rec.outputs.len() {
            return Err(Error::Shape(format!(
                "{} output gradients for {} channels",
                grad_outputs.len(),
                rec.outputs.len()
            )));
        }
        let seeds: Vec<(NodeId, DenseMatrix)> = rec
            .outputs
            .iter()
            .copied()
            .zip(grad_outputs.iter().cloned())
            .collect();
        let grads = rec.tape.backward(params, &seeds)?;
        let inputs = rec
            .inputs
            .iter()
            .map(|n| n.and_then(|n| grads.node(n).cloned()))
            .collect();
        Ok(ModelGrads {
            params: grads.into_params(),
            inputs,
        })
    }
}

fn layer_template(cfg: &ModelConfig) -> Result<Vec<(Role, usize, usize)>> {
    let (l, t) = (cfg.lookback, cfg.horizon);
    Ok(match cfg.kind {
        ModelKind::Linear | ModelKind::Nlinear => vec![(Role::Linear, l, t)],
        ModelKind::Dlinear => vec![(Role::Seasonal, l, t), (Role::Trend, l, t)],
        ModelKind::Unettsf => {
            let xl = level_lengths(l, &cfg.fpn)?;
            let yl = stage_output_lengths(t, &cfg.fpn)?;
            let stages = cfg.fpn.stages;
            let mut v: Vec<(Role, usize, usize)> = (0..stages)
                .map(|i| (Role::Predictor(i + 1), xl[i], yl[i]))
                .collect();
            for i in (0..stages - 1).rev() {
                v.push((Role::Fusion(i + 1), yl[i + 1] + yl[i], yl[i]));
            }
            v
        }
    })
}
