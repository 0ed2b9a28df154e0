use thiserror::Error;

/// Errors raised by filter design, controller construction, simulation and analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    /// A filter stage would place its cutoff at or above the stage Nyquist frequency.
    #[error("aliasing configuration: {0}")]
    AliasingConfig(String),

    /// The period is too short to host the multistage cascade.
    #[error("infeasible multistage plan: {0}")]
    PlanInfeasible(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A non-finite value appeared inside a real-time computation.
    #[error("numeric fault in {stage} at step {step}: value {value}")]
    NumericFault {
        stage: &'static str,
        step: u64,
        value: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("delay line lag {lag} exceeds capacity {capacity}")]
    LagOutOfRange { lag: usize, capacity: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

/// Rejects non-finite or non-positive values.
pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(invalid(name, format!("must be finite, got {value}")));
    }
    if value <= 0.0 {
        return Err(invalid(name, format!("must be positive, got {value}")));
    }
    Ok(())
}
