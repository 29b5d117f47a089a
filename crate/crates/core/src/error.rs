use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument had the wrong shape or an out-of-domain value.
    #[error("rejected input: {0}")]
    Shape(String),

    /// A configuration failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A dataset file could not be read or parsed.
    #[error("ingestion error in {path}: {msg}")]
    Ingestion { path: PathBuf, msg: String },

    /// Synthesis of one sample failed (the caller usually skips it).
    #[error("synthesis error: {0}")]
    Synthesis(String),

    /// Malformed or incompatible checkpoint.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training diverged.
    #[error("non-finite parameter in group `{group}` at episode {episode}")]
    NonFinite { group: String, episode: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn synthesis_err(msg: impl Into<String>) -> Error {
    Error::Synthesis(msg.into())
}
