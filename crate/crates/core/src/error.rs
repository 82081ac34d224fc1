use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] io::Error),

    /// Malformed input file (bad header, bad magic, truncated payload, ...).
    #[error("format error: {0}")]
    Format(String),

    /// A value outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate structure number {0:?}: no significant characters")]
    DegenerateKey(String),

    #[error("shape mismatch at layer {layer} ({kind}): {detail}")]
    Shape {
        layer: usize,
        kind: &'static str,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs rather than by this crate.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Invariant(_))
    }
}

pub(crate) fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub(crate) fn domain_err(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
