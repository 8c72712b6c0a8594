use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    /// True for failures caused by external assets (files, formats, meshes)
    /// rather than by the caller's arguments.
    pub fn is_asset_error(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Parse { .. } | Error::Mesh(_) | Error::Model(_))
    }
}
