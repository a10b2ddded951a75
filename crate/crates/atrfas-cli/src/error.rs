use atrfas::AtrError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Other(AtrError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<AtrError> for CliError {
    fn from(e: AtrError) -> Self {
        if e.is_numeric() {
            return CliError::Numeric(e.to_string());
        }
        match e {
            AtrError::Config(_) | AtrError::Parameter(_) => CliError::Config(e.to_string()),
            AtrError::Format(_)
            | AtrError::Io { .. }
            | AtrError::Label(_)
            | AtrError::Alignment(_)
            | AtrError::Stratification(_)
            | AtrError::Metric(_) => CliError::Data(e.to_string()),
            other => CliError::Other(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
