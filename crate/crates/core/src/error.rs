use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("unknown class directory `{0}`")]
    UnknownClassDir(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("gradient unavailable: {0}")]
    GradientUnavailable(String),

    #[error("statistic undefined: {0}")]
    Undefined(String),

    #[error("optimization aborted at step {step}: non-finite objective or gradient")]
    OptimizationAborted {
        step: usize,
        trace: Box<crate::featvis::OptimizationTrace>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch for {0}")]
    Checksum(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
