use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, sizes, or architecture choices that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity showed up where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The API was called in an order or with arguments it does not accept.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    /// Quadratic weighted kappa has zero expected disagreement and the
    /// observed matrix differs from the expected one.
    #[error("kappa undefined: {0}")]
    UndefinedKappa(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
