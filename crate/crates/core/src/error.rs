use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{file}:{line}: {message}")]
    Load {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid {what}: {message}")]
    Validation { what: &'static str, message: String },

    #[error("gradient check unreliable: {0}")]
    UnreliableCheck(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Validation {
            what,
            message: msg.into(),
        }
    }

    pub(crate) fn load(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Load {
            file: file.into(),
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input (files, flags, parameters) rather
    /// than by a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Contract(_)
                | Error::Load { .. }
                | Error::Validation { .. }
                | Error::Json { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
