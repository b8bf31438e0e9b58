//! Shared error type for the simulator library.

use std::path::PathBuf;

use thiserror::Error;

/// Unified error for configuration, numerical, protocol, and I/O failures.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter, dimension, or configuration value is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced or received non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A server/client interaction violated the protocol rules.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The requested data partition cannot be satisfied by the sample pool.
    #[error("infeasible partition: {0}")]
    Partition(String),

    /// Filesystem interaction failed.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Output artifact already exists and overwriting was not requested.
    #[error("refusing to overwrite existing output at {0}; pass --force to allow")]
    WouldOverwrite(PathBuf),

    /// A persisted artifact could not be parsed.
    #[error("malformed artifact {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn partition(msg: impl Into<String>) -> Self {
        Error::Partition(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
