//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad shapes, out-of-range hyperparameters,
    /// incompatible module wiring. Raised before any heavy compute.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (CSV / binary recordings, segment archives).
    #[error("format error: {0}")]
    Format(String),

    /// Signal-processing precondition failures (too-short inputs, cutoffs
    /// outside the representable band, ...).
    #[error("dsp error: {0}")]
    Dsp(String),

    /// Numeric failures during compute: non-finite values, NaN losses.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn dsp(msg: impl Into<String>) -> Self {
        Error::Dsp(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
