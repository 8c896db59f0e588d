use thiserror::Error;

/// Errors produced while building bases, evaluating likelihoods, or running
/// the selection pipeline.
#[derive(Debug, Error)]
pub enum StvcError {
    #[error("degenerate axis: {0}")]
    DegenerateAxis(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty basis: {0}")]
    EmptyBasis(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("perfect fit (d = {0:e}); the profiled likelihood is undefined")]
    PerfectFit(f64),

    #[error("numerical failure at theta {theta:?}: {reason}")]
    NumericalFailure {
        /// `(tau2, alpha)` pairs of the terms in the offending model.
        theta: Vec<(f64, f64)>,
        reason: String,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("term cannot be fitted: {0}")]
    Unfittable(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl StvcError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            StvcError::Config(_) | StvcError::InvalidParameter(_) => 2,
            StvcError::Io(_) | StvcError::Csv(_) | StvcError::Parse { .. } => 3,
            StvcError::SingularDesign(_)
            | StvcError::PerfectFit(_)
            | StvcError::NumericalFailure { .. }
            | StvcError::NotPositiveDefinite(_)
            | StvcError::Unfittable(_) => 4,
            StvcError::DegenerateAxis(_) | StvcError::EmptyBasis(_) => 5,
            StvcError::ShapeMismatch(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, StvcError>;
