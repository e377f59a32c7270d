use std::path::PathBuf;

/// Errors surfaced by every subsystem of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input array or layer wiring does not have the shape the operation requires.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A caller-supplied value is outside the accepted domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A dataset, label file or prediction file is malformed.
    #[error("data error: {0}")]
    Data(String),

    /// The ensemble index has a hole; the cascade cannot run without it.
    #[error("missing checkpoint for view {view} / AU{au}")]
    MissingCheckpoint { view: String, au: u8 },

    /// A checkpoint file could not be decoded.
    #[error("checkpoint format error in {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
