use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. `Config` maps to exit code 1 in the CLI,
/// `Data`/`Parse` to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("span {start}..{end} out of range for {len} tokens")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("overlapping spans: {0}")]
    OverlappingSpans(String),

    #[error("unknown tag symbol `{0}`")]
    UnknownTag(String),

    #[error("alignment error in turn {turn}: gold has {gold} tokens, pred has {pred}")]
    Alignment {
        turn: usize,
        gold: usize,
        pred: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error::Data(message.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
