use std::path::PathBuf;

use segcrowd_autograd::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("manifest line {line}, column {column}: {reason}")]
    Manifest { line: usize, column: usize, reason: String },

    #[error("entry {id}: point ({row}, {col}) lies outside the {height}x{width} image")]
    PointOutOfBounds {
        id: String,
        row: f64,
        col: f64,
        height: usize,
        width: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at iteration {iteration}: loss is {value}")]
    Diverged { iteration: usize, value: f64 },

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Self::Format {
            format,
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(reason: impl Into<String>) -> Self {
        Self::InvalidArgument(reason.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
