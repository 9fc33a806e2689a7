//! Training options: a flat JSON file merged with command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use unettsf::data::{resolve_dataset, Protocol, Variant, DATA_DIR_ENV};
use unettsf::fpn::FpnConfig;
use unettsf::models::{ModelConfig, ModelKind};
use unettsf::trainer::TrainConfig;

use crate::error::CliError;

pub const DEFAULT_OUT: &str = "runs/train";

/// Every key is optional; flags take precedence over the file. Keys match
/// the long flag names with `-` written as `_`.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    /// Model: unettsf, linear, nlinear or dlinear [default: unettsf]
    #[arg(long, value_name = "KIND")]
    pub model: Option<ModelKind>,

    /// Dataset name (etth1, etth2, ettm1, ettm2, traffic, electricity, weather, ili) or CSV path [default: etth1]
    #[arg(long, value_name = "NAME")]
    pub dataset: Option<String>,

    /// Dataset root [default: $UNETTSF_DATA_DIR, else ./data]
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,

    /// Split protocol: ett_hourly, ett_minute or ratio_7_1_2 [default: the dataset's standard protocol]
    #[arg(long, value_name = "NAME")]
    pub protocol: Option<Protocol>,

    /// multivariate (all channels) or univariate (last column only) [default: multivariate]
    #[arg(long, value_name = "MODE")]
    pub variant: Option<Variant>,

    /// Look-back window length [default: 336]
    #[arg(long = "L", value_name = "N")]
    #[serde(rename = "L")]
    pub lookback: Option<usize>,

    /// Forecast horizon [default: 96]
    #[arg(long = "T", value_name = "N")]
    #[serde(rename = "T")]
    pub horizon: Option<usize>,

    /// Pyramid stages for unettsf [default: 4]
    #[arg(long, value_name = "N")]
    pub stages: Option<usize>,

    /// One parameter set per channel (false shares one set) [default: true]
    #[arg(long, value_name = "BOOL")]
    pub individual: Option<bool>,

    /// Moving-average kernel for dlinear [default: 25]
    #[arg(long, value_name = "N")]
    pub ma_kernel: Option<usize>,

    /// Adam learning rate [default: 0.005]
    #[arg(long, value_name = "X")]
    pub lr: Option<f64>,

    /// Mini-batch size [default: 32]
    #[arg(long, value_name = "N")]
    pub batch: Option<usize>,

    /// Maximum epochs [default: 100]
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,

    /// Epochs without validation improvement before stopping [default: 10]
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,

    /// Halve the learning rate every epoch after the third [default: true]
    #[arg(long, value_name = "BOOL")]
    pub lr_decay: Option<bool>,

    /// Seed for initialization and shuffling [default: 2021]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,

    /// Output directory [default: runs/train]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl TrainOptions {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }

    /// Values from `self` win over `base`.
    pub fn over(self, base: TrainOptions) -> TrainOptions {
        TrainOptions {
            model: self.model.or(base.model),
            dataset: self.dataset.or(base.dataset),
            data_dir: self.data_dir.or(base.data_dir),
            protocol: self.protocol.or(base.protocol),
            variant: self.variant.or(base.variant),
            lookback: self.lookback.or(base.lookback),
            horizon: self.horizon.or(base.horizon),
            stages: self.stages.or(base.stages),
            individual: self.individual.or(base.individual),
            ma_kernel: self.ma_kernel.or(base.ma_kernel),
            lr: self.lr.or(base.lr),
            batch: self.batch.or(base.batch),
            epochs: self.epochs.or(base.epochs),
            patience: self.patience.or(base.patience),
            lr_decay: self.lr_decay.or(base.lr_decay),
            seed: self.seed.or(base.seed),
            out: self.out.or(base.out),
        }
    }

    pub fn resolve(self) -> ResolvedTrain {
        let train = TrainConfig::default();
        let model = ModelConfig::new(ModelKind::Unettsf, 336, 96, 1);
        let dataset = self.dataset.unwrap_or_else(|| "etth1".into());
        let data_dir = resolve_data_dir(self.data_dir);
        let (_, default_protocol) = resolve_dataset(&dataset, Some(&data_dir));
        ResolvedTrain {
            model: self.model.unwrap_or(model.kind),
            protocol: self.protocol.unwrap_or(default_protocol),
            dataset,
            data_dir,
            variant: self.variant.unwrap_or(Variant::Multivariate),
            lookback: self.lookback.unwrap_or(model.lookback),
            horizon: self.horizon.unwrap_or(model.horizon),
            stages: self.stages.unwrap_or(model.fpn.stages),
            individual: self.individual.unwrap_or(model.individual),
            ma_kernel: self.ma_kernel.unwrap_or(model.ma_kernel),
            lr: self.lr.unwrap_or(train.lr),
            batch: self.batch.unwrap_or(train.batch_size),
            epochs: self.epochs.unwrap_or(train.max_epochs),
            patience: self.patience.unwrap_or(train.patience),
            lr_decay: self.lr_decay.unwrap_or(train.lr_decay),
            seed: self.seed.unwrap_or(train.seed),
            out: self.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        }
    }
}

pub fn resolve_data_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Fully resolved training run; serializes to a config file that
/// reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTrain {
    pub model: ModelKind,
    pub dataset: String,
    pub data_dir: PathBuf,
    pub protocol: Protocol,
    pub variant: Variant,
    #[serde(rename = "L")]
    pub lookback: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub stages: usize,
    pub individual: bool,
    pub ma_kernel: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub lr_decay: bool,
    pub seed: u64,
    pub out: PathBuf,
}

impl ResolvedTrain {
    pub fn model_config(&self, channels: usize) -> ModelConfig {
        ModelConfig {
            kind: self.model,
            lookback: self.lookback,
            horizon: self.horizon,
            channels,
            fpn: FpnConfig::with_stages(self.stages),
            individual: self.individual,
            ma_kernel: self.ma_kernel,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
            lr_decay: self.lr_decay,
        }
    }

    pub fn dataset_path(&self) -> PathBuf {
        resolve_dataset(&self.dataset, Some(&self.data_dir)).0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("resolved config serializes") + "\n"
    }
}
