use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("price {price} outside no-arbitrage band ({lower}, {upper})")]
    ArbitrageViolation { price: f64, lower: f64, upper: f64 },

    #[error("no convergence after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("training diverged at step {step}: {components}")]
    Divergence { step: usize, components: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

/// Fails with a domain error unless `tau > 0` (and finite).
pub(crate) fn check_tau<T: crate::Scalar>(tau: T) -> Result<()> {
    if tau.is_finite() && tau > T::zero() {
        Ok(())
    } else {
        Err(Error::domain(format!("time to maturity must be positive, got {tau}")))
    }
}
