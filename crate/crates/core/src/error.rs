use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Dimensions of the operands do not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// A value that must be finite is NaN or infinite.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An argument is outside its documented domain.
    #[error("argument error: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn numeric_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numeric(msg.into()))
}

pub(crate) fn argument_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
