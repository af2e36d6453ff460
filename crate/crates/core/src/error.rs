use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {malformed} of {total} rows malformed (wrong format selected?)")]
    Format {
        path: PathBuf,
        malformed: usize,
        total: usize,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for table of {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("gate failed: {metric} = {value:.4} below required {min:.4}")]
    Gate {
        metric: String,
        value: f64,
        min: f64,
    },
}

impl Error {
    /// Process exit status: 1 for configuration problems, 3 for a failed
    /// quality gate, 2 for everything that is wrong with the data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Gate { .. } => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
