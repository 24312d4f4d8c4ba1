use thiserror::Error;

/// Errors raised by models, samplers and the detector.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or target produced a NaN or infinite value where a finite one is required.
    #[error("non-finite {what} during evaluation")]
    NonFinite { what: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    /// Linear solve failed even after Levenberg damping.
    #[error("linear solve failed after {doublings} damping doublings")]
    Singular { doublings: u32 },

    /// Every importance weight was zero.
    #[error("importance weights vanished: proposal does not cover the target")]
    WeightsVanished,

    /// The changepoint posterior lost all of its mass.
    #[error("all changepoint hypotheses have zero mass at t={t}")]
    MassVanished { t: usize },

    /// The model lacks a closed-form capability requested by the configuration.
    #[error("model does not support {0}")]
    Unsupported(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Returns `value` if finite, otherwise a [`Error::NonFinite`] tagged with `what`.
pub(crate) fn finite(value: f64, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what })
    }
}
