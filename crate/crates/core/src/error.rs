use thiserror::Error;

/// Errors shared across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },

    #[error("frequency base sets differ in {0}")]
    BasisMismatch(&'static str),

    #[error("constant mode (|frequency| = {value:.3e}) has no zero-mean antiderivative")]
    ConstantMode { value: f64 },

    #[error("order {order} needs orders 1..{order} populated, found {available}")]
    MissingOrder { order: usize, available: usize },

    #[error("order 0 (carrier) must be removed before averaging; it is nonempty")]
    CarrierNotRemoved,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("frequency collision: {0}")]
    FrequencyCollision(String),

    #[error("step size underflow at s = {s:.6e} (h = {h:.3e})")]
    StepUnderflow { s: f64, h: f64 },

    #[error("unitarity drift {drift:.3e} exceeds limit {limit:.3e} at s = {s:.6e}")]
    UnitarityDrift { s: f64, drift: f64, limit: f64 },

    #[error("invariant violated in {module}: {detail}")]
    InvariantViolation { module: &'static str, detail: String },

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
