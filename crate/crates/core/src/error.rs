use thiserror::Error;

/// Errors raised by the sampling and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("state index {index} out of range for {states} states")]
    IndexOutOfRange { index: usize, states: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("zero density at the evaluation point")]
    ZeroDensity,

    #[error("implicit kernel has no density")]
    ImplicitKernel,

    #[error("latent-spherical kernel requires the latent state of the current point")]
    MissingLatent,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("log of nonpositive value {0}")]
    LogOfNonPositive(f64),

    #[error("zero denominator in acceptance ratio")]
    ZeroDenominator,

    #[error("incompatible configuration: {0}")]
    Incompatible(String),

    #[error("minorization fails: some row of the table has a zero minimum")]
    MinorizationFailure,

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("quadrature grid too coarse: halving the step changed the result by {change:e}")]
    GridTooCoarse { change: f64 },

    #[error("bound chain violated: {link}; instance: {instance}")]
    BoundViolation { link: String, instance: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
