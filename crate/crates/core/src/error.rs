//! Error type shared across the crate.

/// Errors surfaced by schedule construction, sampling, training and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter was outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Tensor or embedding dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A prompt referenced a token that is not in the vocabulary.
    #[error("unknown token `{0}`")]
    UnknownToken(String),

    /// A checkpoint failed to load or validate.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
