use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e}, tolerance {tolerance:.3e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("{function} is undefined for eigenvalue {eigenvalue:.6e}")]
    Domain {
        function: &'static str,
        eigenvalue: f64,
    },

    #[error("matrix is not positive definite (smallest eigenvalue {eigenvalue:.6e})")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("invalid segmentation plan: {0}")]
    Plan(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("bad COV1 file: {0}")]
    Format(String),

    #[error("truncated COV1 file: expected {expected} bytes, found {actual} ({missing} missing)")]
    Truncated {
        expected: u64,
        actual: u64,
        missing: u64,
    },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::Domain { .. } => "domain",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Shape(_) => "shape",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NoConvergence { .. } => "no_convergence",
            Error::NumericalBreakdown(_) => "numerical_breakdown",
            Error::Plan(_) => "plan",
            Error::Graph(_) => "graph",
            Error::Dataset(_) => "dataset",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::GradientCheck(_) => "gradient_check",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
