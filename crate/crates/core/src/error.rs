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

    #[error("{path}: row {row}: {msg}")]
    Parse {
        path: PathBuf,
        /// 1-based data row; 0 refers to the header line.
        row: usize,
        msg: String,
    },

    #[error("manifest mismatch: {0}")]
    Manifest(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("class {class} has {count} samples, at least {required} required")]
    InsufficientClass {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error(
        "kernel matrix of size {size} not positive definite at jitter {jitter:e} \
         (min diagonal {min_diag:e}, max off-diagonal {max_offdiag:e})"
    )]
    NotPositiveDefinite {
        size: usize,
        jitter: f64,
        min_diag: f64,
        max_offdiag: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("class {class}: {source}")]
    ClassFit {
        class: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    Model(String),

    #[error(transparent)]
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
