use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, indices or parameters that violate an operation's preconditions.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// Non-finite gradients or parameters during optimisation.
    #[error("training fault: {0}")]
    TrainingFault(String),

    #[error("degenerate agreement: teacher and student rows are orthogonal (sample {sample})")]
    DegenerateAgreement { sample: usize },

    #[error("rejected threshold {threshold}: one of the induced classes is empty")]
    RejectedThreshold { threshold: f64 },

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("degenerate target: all weights are zero")]
    DegenerateTarget,

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("malformed record {record} in {path}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        record: usize,
        reason: String,
    },

    #[error("length mismatch in {path}: expected {expected} labels, found {found}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("malformed label on line {line} of {path}: {reason}")]
    MalformedLabel {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
