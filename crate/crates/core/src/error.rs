use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the scheduling engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("history ordering violated at pixel {pixel}: sigma {sigma} is not below newest stored {newest}")]
    Ordering { pixel: usize, sigma: f64, newest: f64 },

    #[error("no history available for extrapolation")]
    NoHistory,

    #[error("non-finite value at step {step}: {detail}")]
    Numeric { step: usize, detail: String },

    #[error("format error in `{field}`: {detail}")]
    Format { field: String, detail: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
