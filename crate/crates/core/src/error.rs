use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("risk level alpha must lie in (0, 1), got {0}")]
    InvalidRiskLevel(f64),

    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),

    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in CLI error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::InvalidRiskLevel(_) => "invalid_risk_level",
            Error::InvalidThreshold(_) => "invalid_threshold",
            Error::DegenerateInstance(_) => "degenerate_instance",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
