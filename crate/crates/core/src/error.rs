use thiserror::Error;

/// Errors raised by the filtering library.
#[derive(Debug, Error)]
pub enum Error {
    /// A ring term has a non-negative quadratic exponent, so its integral over the line diverges.
    #[error("term {index} is not integrable (quadratic coefficient {a} >= 0)")]
    NonIntegrable { index: usize, a: f64 },

    #[error("monomial degree {n} exceeds the supported limit of {limit}")]
    DegreeLimit { n: u32, limit: u32 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The metric (Gram or Fisher) matrix could not be inverted reliably.
    #[error("singular metric matrix (condition estimate {condition:e})")]
    SingularMetric { condition: f64 },

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    /// The leading natural parameter of a polynomial exponential density became non-negative.
    #[error("integrability lost: leading coefficient {leading} >= 0")]
    IntegrabilityLost { leading: f64 },

    #[error("grid overflow: {mass:.3e} of the mass lies near the grid boundary")]
    GridOverflow { mass: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("prior fit failed: distance {distance:.3e} exceeds bound {bound:.3e}")]
    OptimizationFailed { distance: f64, bound: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
