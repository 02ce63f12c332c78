use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the planning pipeline and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The run configuration is inconsistent or incomplete.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file did not match its expected layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A dataset record could not be decoded.
    #[error("format error in record {index} (byte {offset}): {message}")]
    Record {
        index: usize,
        offset: u64,
        message: String,
    },

    /// Label generation could not produce a collision-free label.
    #[error("generation failed for scenario `{scenario}`: {message}")]
    Generation { scenario: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
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
