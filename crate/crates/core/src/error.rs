use thiserror::Error;

/// Errors shared by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (shape mismatch,
    /// out-of-range parameter, non-finite input, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The input is structurally valid but carries no usable information
    /// (all-zero singular values, empty evaluation denominator, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A file did not match its declared on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// An operation was requested without the artifacts it depends on,
    /// e.g. update subtraction without a recorded history.
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
