use alloc::string::String;

/// Failure categories shared by every module.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    /// True for errors caused by a violated modelling assumption rather than
    /// by the numerics.
    pub fn is_hypothesis(&self) -> bool {
        matches!(self, Error::Hypothesis(_) | Error::Construction(_) | Error::Domain(_))
    }
}

pub type Result<T> = core::result::Result<T, Error>;
