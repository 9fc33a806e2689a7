//! Long-horizon time-series forecasting with UnetTSF: a feature pyramid of
//! average-pooled input windows, one linear predictor per pyramid stage and
//! top-down concat-then-linear fusion. Also ships the Linear, NLinear and
//! DLinear baselines, the benchmark data protocol, a from-scratch trainer
//! and a parameter/MAC profiler.

pub mod bench;
pub mod data;
pub mod error;
pub mod fpn;
pub mod models;
pub mod tensor;
pub mod trainer;

pub use error::{CheckpointError, Error, Result};
