use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NdError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NdError::Dimension(msg.into()))
}
