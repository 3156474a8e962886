use std::io;

use thiserror::Error;

/// Errors produced anywhere in the tracking core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Format(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing key: {0}")]
    MissingKey(String),

    #[error("frame {frame} is not after the last processed frame {last}")]
    FrameOrder { frame: u32, last: u32 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
