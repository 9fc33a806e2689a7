//! Time-series feature pyramid: level 1 is the raw window, every further
//! level is an average-pooled copy of the one before it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{avgpool1d_backward, avgpool1d_forward, PoolSpec};

pub const MAX_STAGES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpnConfig {
    pub stages: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for FpnConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            kernel: 3,
            stride: 2,
            padding: 0,
        }
    }
}

impl FpnConfig {
    pub fn with_stages(stages: usize) -> Self {
        Self {
            stages,
            ..Self::default()
        }
    }

    pub fn pool(&self) -> PoolSpec {
        PoolSpec::new(self.kernel, self.stride, self.padding)
    }

    fn check_stages(&self) -> Result<()> {
        if self.stages == 0 || self.stages > MAX_STAGES {
            return Err(Error::InvalidConfig(format!(
                "stages must be in 1..={MAX_STAGES}, got {}",
                self.stages
            )));
        }
        Ok(())
    }
}

pub fn pooled_len(len: usize, cfg: &FpnConfig) -> Result<usize> {
    cfg.pool().output_len(len)
}

/// `[L, pooled_len(L), pooled_len(pooled_len(L)), ...]` with `stages` entries.
pub fn level_lengths(len: usize, cfg: &FpnConfig) -> Result<Vec<usize>> {
    cfg.check_stages()?;
    if len == 0 {
        return Err(Error::InvalidConfig("series length must be >= 1".into()));
    }
    let mut lengths = Vec::with_capacity(cfg.stages);
    lengths.push(len);
    for stage in 2..=cfg.stages {
        let prev = *lengths.last().unwrap();
        let next = pooled_len(prev, cfg).map_err(|e| {
            Error::InvalidConfig(format!(
                "stage {stage} cannot be built from a level of length {prev}: {e}"
            ))
        })?;
        lengths.push(next);
    }
    Ok(lengths)
}

/// The pooled representations of one channel's window.
#[derive(Debug, Clone, PartialEq)]
pub struct FpnLevels {
    levels: Vec<Vec<f64>>,
}

impl FpnLevels {
    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn level(&self, stage: usize) -> &[f64] {
        &self.levels[stage - 1]
    }

    pub fn into_levels(self) -> Vec<Vec<f64>> {
        self.levels
    }
}

pub fn build_fpn(x: &[f64], cfg: &FpnConfig) -> Result<FpnLevels> {
    level_lengths(x.len(), cfg)?;
    let mut levels = Vec::with_capacity(cfg.stages);
    levels.push(x.to_vec());
    for _ in 1..cfg.stages {
        let next = avgpool1d_forward(levels.last().unwrap(), cfg.pool())?;
        levels.push(next);
    }
    Ok(FpnLevels { levels })
}

/// Pulls per-level gradients back to the input window. Each level branches
/// off the pooling chain, so the input gradient is the sum over levels.
pub fn build_fpn_backward(grad_levels: &[Vec<f64>], cfg: &FpnConfig) -> Result<Vec<f64>> {
    let Some(first) = grad_levels.first() else {
        return Err(Error::Shape("no level gradients given".into()));
    };
    let lengths = level_lengths(first.len(), cfg)?;
    if grad_levels.len() != lengths.len() {
        return Err(Error::Shape(format!(
            "expected {} level gradients, got {}",
            lengths.len(),
            grad_levels.len()
        )));
    }
    for (i, (g, &want)) in grad_levels.iter().zip(&lengths).enumerate() {
        if g.len() != want {
            return Err(Error::Shape(format!(
                "level {} gradient has length {}, level length is {want}",
                i + 1,
                g.len()
            )));
        }
    }
    let mut carry = grad_levels.last().unwrap().clone();
    for i in (1..lengths.len()).rev() {
        let mut below = avgpool1d_backward(&carry, lengths[i - 1], cfg.pool())?;
        for (b, g) in below.iter_mut().zip(&grad_levels[i - 1]) {
            *b += g;
        }
        carry = below;
    }
    Ok(carry)
}
