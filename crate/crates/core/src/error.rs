use thiserror::Error;

/// Errors raised by the model, map, control and engine layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("matrix entries must be finite")]
    NonFinite,

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid derivation spec: {0}")]
    InvalidSpec(String),

    #[error("map does not preserve the model: {0}")]
    ClosureViolation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series diverges for exponent p = {p} (need p < 1)")]
    DivergentSeries { p: f64 },

    #[error("maps are defined on different models")]
    DomainMismatch,

    #[error("scale overflow: r^N * |a| = {value:e} exceeds 1e300; reduce N or the probe norms")]
    ScaleOverflow { value: f64 },

    #[error("hypothesis not met: {0}")]
    HypothesisNotMet(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
