use ndarr_core::NdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AtrError {
    #[error(transparent)]
    Tensor(#[from] NdError),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AtrError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        AtrError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True when the failure came from a NaN/Inf produced during computation.
    pub fn is_numeric(&self) -> bool {
        matches!(self, AtrError::Tensor(NdError::NonFinite(_)))
    }
}

pub type Result<T> = std::result::Result<T, AtrError>;
