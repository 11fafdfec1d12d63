use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or sizes do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A configuration value violates its constraints.
    #[error("config error: {0}")]
    Config(String),

    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A NaN or infinity showed up where only finite values are valid.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A weight store does not match the layer enumeration of a model config.
    #[error("structure error: {0}")]
    Structure(String),

    /// Malformed file contents; `offset` is the byte position of the problem.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
