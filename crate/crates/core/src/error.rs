use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The per-instance budget cannot cover the cheapest subset plus the
    /// floor label rate, so no multiplier satisfies the budget identity.
    #[error("infeasible budget: b = {budget} but the minimum achievable spend is {min_spend}")]
    InfeasibleBudget { budget: f64, min_spend: f64 },

    #[error("singular system (dimension {dim}, min pivot {min_pivot:e}, trace {trace:e})")]
    SingularSystem { dim: usize, min_pivot: f64, trace: f64 },

    #[error("label source failed at instance {index} after {labels_collected} labels: {message}")]
    LabelSource {
        index: usize,
        labels_collected: usize,
        message: String,
    },

    #[error("unknown predictor '{0}'")]
    UnknownPredictor(String),

    #[error("missing label for instance {0}")]
    MissingLabel(usize),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {value}")))
    }
}
