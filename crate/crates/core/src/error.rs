use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration failed at t = {t} h: {reason}")]
    Integration { t: f64, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("sampler error: {0}")]
    Sampler(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Estimation,
    ContractViolation,
    Other,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Domain(_) | Error::Csv(_) | Error::Json(_) => {
                ErrorKind::Input
            }
            Error::Estimation(_) | Error::Sampler(_) | Error::Integration { .. } => ErrorKind::Estimation,
            Error::ContractViolation(_) => ErrorKind::ContractViolation,
            Error::Io(_) => ErrorKind::Other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
