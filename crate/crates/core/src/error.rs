use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the decomposition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context} at line {line}, column {column}: {message}")]
    Parse {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("no score for pair ({i}, {j})")]
    MissingPair { i: usize, j: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("numerical error at pixel {pixel}, label {label}: {message}")]
    Numerical {
        pixel: usize,
        label: usize,
        message: String,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, err: &serde_json::Error) -> Self {
        Error::Parse {
            context: context.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
