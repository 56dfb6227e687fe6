use std::path::PathBuf;

use symfuse_autograd::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("environment: {0}")]
    Env(String),

    #[error("step called on a terminated episode; call reset first")]
    StepAfterDone,

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("numerical failure: {msg}")]
    Numerical { msg: String, dump: Option<PathBuf> },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("metrics log: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { field: field.into(), msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 1 config, 2 numerical, 3 I/O, matching the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::Io { .. } | Error::Checkpoint { .. } | Error::Csv(_) | Error::Json(_) => 3,
            Error::Numerical { .. } | Error::Tensor(_) | Error::Env(_) | Error::StepAfterDone | Error::Calibration(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
