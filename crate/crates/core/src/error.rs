use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image is empty")]
    EmptyImage,

    #[error("invalid image dimensions: {0}")]
    InvalidDimensions(String),

    #[error("scale count {requested} out of range 1..={max}")]
    ScalesOutOfRange { requested: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid HMT parameters: {field}: {reason}")]
    InvalidParams { field: String, reason: String },

    #[error("cannot parse parameter file {path}: {reason}")]
    ParamsParse { path: PathBuf, reason: String },

    #[error("non-finite likelihood: {0}")]
    NonFinite(String),

    #[error("distribution is not normalized: {0}")]
    NotNormalized(String),

    #[error("zero-variance input: {0}")]
    ZeroVariance(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("fixation ({x}, {y}) outside {width}x{height} map")]
    FixationOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn params(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParams {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
