use thiserror::Error;

/// Everything that can go wrong while building, solving or verifying a model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{function} is undefined at {value}")]
    Domain { function: &'static str, value: f64 },

    #[error(
        "fixed-point iteration did not converge after {iterations} iterations \
         (last change {last_delta:e}, residual {residual:e})"
    )]
    NonConvergence {
        iterations: usize,
        last_delta: f64,
        residual: f64,
    },

    #[error("backward integration failed at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("mixture fit sup-error {sup_error:e} exceeds ceiling {ceiling:e}")]
    FitTooCoarse { sup_error: f64, ceiling: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
