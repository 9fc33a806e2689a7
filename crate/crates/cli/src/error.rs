use std::fmt;

use unettsf::Error;

/// A command failure with its process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_TRAINING: u8 = 4;
pub const EXIT_CHECKPOINT: u8 = 5;
pub const EXIT_IO: u8 = 1;

impl CliError {
    pub fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, "config", message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(EXIT_DATA, "data", message)
    }

    pub fn checkpoint(message: impl Into<String>) -> Self {
        Self::new(EXIT_CHECKPOINT, "checkpoint", message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(EXIT_IO, "io", message)
    }

    /// `error kind=<kind> code=<n> message="<json-escaped text>"`
    pub fn line(&self) -> String {
        let msg = serde_json::to_string(&self.message).expect("string serializes");
        format!("error kind={} code={} message={msg}", self.kind, self.code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::InvalidConfig(_) | Error::Usage(_) | Error::Shape(_) => CliError::config(message),
            Error::Data(_) => CliError::data(message),
            Error::Training(_) => CliError::new(EXIT_TRAINING, "training", message),
            Error::Checkpoint(_) => CliError::checkpoint(message),
            Error::Io { .. } => CliError::io(message),
        }
    }
}
