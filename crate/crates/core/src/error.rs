use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Distinct failure modes when decoding a checkpoint file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, expected \"UTSF\"")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("malformed checkpoint header: {0}")]
    Header(String),

    #[error("parameter count mismatch: header config implies {expected}, blob holds {found}")]
    CountMismatch { expected: usize, found: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
