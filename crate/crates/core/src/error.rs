use std::path::PathBuf;

use thiserror::Error;

use crate::address::Address;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fetch failed for {address}: {message}")]
    Fetch { address: Address, message: String },

    #[error("unknown contract {0}")]
    Lookup(Address),

    #[error("contract {0} is not open source and cannot be fingerprinted")]
    NotFingerprintable(Address),

    #[error("integrity violation: {0}")]
    Integrity(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(origin: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            origin: origin.into(),
            line,
            message: message.into(),
        }
    }

    /// Whether the failure originates from the filesystem rather than from the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
