use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid or unparsable configuration; always names the field.
    #[error("config error: field `{field}`: {message}")]
    Config { field: String, message: String },
    /// Malformed checkpoint contents.
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] cladapter_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn config_err<T>(field: &str, message: impl Into<String>) -> Result<T> {
    Err(CliError::Config {
        field: field.to_string(),
        message: message.into(),
    })
}
