use thiserror::Error;

/// Errors produced by every tier of the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("state became non-finite: {0}")]
    NonFinite(String),

    #[error("divergence at epoch {epoch}: |w| = {magnitude:e} exceeds guard {guard:e}")]
    Divergence { epoch: usize, magnitude: f64, guard: f64 },

    #[error("evaluation time {t:e} s outside simulated horizon [0, {horizon:e}] s")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("subthreshold violation at t = {t:e} s: {what} = {current:e} A")]
    SubthresholdViolation { what: String, current: f64, t: f64 },

    #[error("infeasible circuit mapping: {0}")]
    Infeasible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidInput(format!("{what} must be finite, got {value}")))
    }
}
