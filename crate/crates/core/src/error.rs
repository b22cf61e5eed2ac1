use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input.
    #[error("input error: {0}")]
    Input(String),
    /// A numerical routine failed (e.g. a Gram matrix could not be factorized).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An internal invariant was violated by the caller's state.
    #[error("invariant violation: {0}")]
    Invariant(String),
    /// Training finished without a usable nominal set.
    #[error("training failure: {0}")]
    Training(String),
    /// A configuration that cannot serve the requested operation.
    #[error("configuration error: {0}")]
    Config(String),
    /// Exhaustive computation refused because the instance is too large.
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
