use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("entity {0} has no training interactions")]
    ZeroDegree(String),

    #[error("kernel bandwidth is degenerate: all points coincide")]
    DegenerateBandwidth,

    #[error("at least two points are required per side, got {0}")]
    InsufficientPairs(usize),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("user {0} has interacted with every item; no negative exists")]
    Unsampleable(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("metric is undefined: {0}")]
    Undefined(String),

    #[error("invalid distribution: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
