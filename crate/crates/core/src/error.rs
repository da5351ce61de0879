use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (sizes, ranges, counts).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scene generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("truncated file {path}: {len} bytes")]
    Truncated { path: PathBuf, len: u64 },

    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The message without the prefix already implied by [`Error::category`].
    pub fn detail(&self) -> String {
        match self {
            Error::Contract(m) | Error::Config(m) | Error::Inconsistent(m) | Error::ArchitectureMismatch(m) => m.clone(),
            other => other.to_string(),
        }
    }

    /// Stable machine-readable category, used by the command line for its error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::NonFinite(_) => "non_finite",
            Error::Config(_) => "config",
            Error::Generation { .. } => "generation",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Truncated { .. } => "truncated",
            Error::Inconsistent(_) => "inconsistent",
            Error::ArchitectureMismatch(_) => "architecture_mismatch",
            Error::Malformed { .. } => "malformed",
            Error::Io { .. } => "io",
        }
    }
}
