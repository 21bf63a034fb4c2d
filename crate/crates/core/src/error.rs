use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the monitoring library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid architecture, hyperparameter or scenario configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A vector or matrix had the wrong dimensions.
    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    /// Invalid sample data (non-finite values, bad labels, empty sets).
    #[error("data error: {0}")]
    Data(String),

    /// A per-class detector could not be fitted.
    #[error("fit error for class `{class}`: {reason}")]
    Fit { class: String, reason: String },

    /// Malformed input text (CSV rows, persisted documents).
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// A persisted artifact failed validation on load.
    #[error("restore error in {}: {reason}", path.display())]
    Restore { path: PathBuf, reason: String },

    /// A monitor request referenced something that does not exist.
    #[error("request error: {0}")]
    Request(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
