use thiserror::Error;

/// Errors surfaced by solver and measure operations.
///
/// Numerical guards (stability, clipped-mass budget) are errors rather than
/// warnings: a run that trips them is not trustworthy and must not silently
/// produce output.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("lattice mismatch: operands live on different lattices")]
    LatticeMismatch,

    #[error("atom outside the domain box at coordinate {coord:?}")]
    AtomOutsideBox { coord: Vec<f64> },

    #[error("measure has zero total mass")]
    ZeroMass,

    #[error("control value {u} outside [{lo}, {hi}]")]
    ControlOutOfRange { u: f64, lo: f64, hi: f64 },

    #[error("stability guard violated: dt = {dt} but dt*lambda_max <= 0.5 requires dt <= {required}")]
    StabilityGuard { dt: f64, required: f64 },

    #[error("cumulative clipped mass {total:.3e} exceeds budget {budget:.3e}; the run is unstable")]
    ClippedMassBudget { total: f64, budget: f64 },

    #[error("sampling step {step} too coarse for smoothing width; need step <= {required}")]
    SamplingTooCoarse { step: f64, required: f64 },

    #[error("control cost curvature c_u = {c_u} must be > 0 for a concave stage problem")]
    NonConcave { c_u: f64 },

    #[error("identical inputs: sensitivity ratio undefined for zero initial distance")]
    IdenticalInputs,

    #[error("time grid mismatch: {0}")]
    TimeGridMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },
}

impl CoreError {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        CoreError::InvalidConfig {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
