//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by trace parsing, workload validation, the feature
/// pipeline, clustering, and report generation.
#[derive(Debug, Error)]
pub enum MavError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("window {index}: {message}")]
    InvariantViolation { index: u64, message: String },

    #[error("header/body mismatch: {0}")]
    TotalsMismatch(String),

    #[error("empty series")]
    EmptySeries,

    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),

    #[error("invalid oracle config: {0}")]
    InvalidOracle(String),

    #[error("pipeline: {0}")]
    Pipeline(String),

    #[error("clustering: {0}")]
    Clustering(String),

    #[error("report: {0}")]
    Report(String),
}

impl MavError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MavError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, MavError>;
