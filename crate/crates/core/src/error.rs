//! Error type shared across the whole pipeline.
//!
//! Every fallible operation in this crate returns [`Result`]. Variants are
//! grouped by what went wrong rather than where, so callers (and the CLI exit
//! code mapping) can react uniformly: shape bugs, numerical blow-ups, bad
//! input data, and missing prerequisites are all distinguishable.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an index set) have incompatible shapes.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A computation produced NaN/Inf or an otherwise unusable value.
    #[error("numeric failure in {context}: {detail}")]
    Numeric { context: String, detail: String },

    /// A token or token id is outside the vocabulary.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// The caller violated an API contract (bad argument combination).
    #[error("usage error: {0}")]
    Usage(String),

    /// A dataset is too small for the requested split or operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A serialized artifact or task file failed to parse.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// Every cell of a hyperparameter grid failed.
    #[error("grid search failed: {0}")]
    GridFailure(String),

    /// A pipeline stage needs an artifact that has not been produced yet.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// A configuration value is missing or out of range; `path` names the field.
    #[error("config error at {path}: {detail}")]
    Config { path: String, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand used by tensor ops.
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    /// Shorthand for NaN/Inf style failures.
    pub fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric { context: context.into(), detail: detail.into() }
    }
}
