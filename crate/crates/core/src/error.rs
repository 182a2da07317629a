use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Variants map onto the CLI exit-code classes: `Config` (2), `Ingestion`
/// (3), everything else (1).
#[derive(Debug, Error)]
pub enum GscError {
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{}:{line}: {msg}", path.display())]
    Ingestion { path: PathBuf, line: usize, msg: String },

    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("probe error: {0}")]
    Probe(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GscError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        GscError::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        GscError::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        GscError::Config { field: field.into(), msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GscError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = GscError> = std::result::Result<T, E>;
