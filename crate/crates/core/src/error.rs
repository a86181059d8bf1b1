use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the toolkit.
///
/// The variants are coarse on purpose: the command-line front end maps each
/// one to a stable process exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates an operation's precondition.
    #[error("{0}")]
    Domain(String),
    /// A configuration document is invalid.
    #[error("config: {0}")]
    Config(String),
    /// A text or binary document could not be parsed.
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    /// A binary document has the wrong layout or version.
    #[error("{0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Domain(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
