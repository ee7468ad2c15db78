//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate box ({x1}, {y1}, {x2}, {y2}): zero or negative area")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("insufficient evidence: {visible} visible joints, need at least {required}")]
    InsufficientEvidence { visible: usize, required: usize },

    #[error("class {0} has no training examples")]
    MissingClass(String),

    #[error("unknown class {0}")]
    UnknownClass(usize),

    #[error("video `{0}` has no detections")]
    NoDetections(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid scene spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
