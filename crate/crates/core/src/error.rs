use thiserror::Error;

/// Errors raised by model construction, the operator pipeline and the planners.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("step {step} out of range {min}..={max}")]
    StepOutOfRange { step: usize, min: usize, max: usize },

    #[error("history has {observations} observations and {actions} actions, which is not a valid shape")]
    MalformedHistory { observations: usize, actions: usize },

    #[error("history is incomplete: {len} steps recorded, {expected} required")]
    IncompleteHistory { len: usize, expected: usize },

    #[error("mixing policy needs at least one component")]
    EmptyPolicyList,

    #[error("auxiliary Gram matrix at step {step} is singular (minimum eigenvalue {min_eigenvalue:e})")]
    SingularLambda { step: usize, min_eigenvalue: f64 },

    #[error("bridge left-inverse check failed at step {step}: residual {residual:e}")]
    LeftInverseFailed { step: usize, residual: f64 },

    #[error("triple Gram matrix is not positive definite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("dataset for tuple (h={step}, a={first}, a'={second}) is empty")]
    EmptyDataset {
        step: usize,
        first: usize,
        second: usize,
    },

    #[error("confidence set is empty")]
    EmptyConfidenceSet,

    #[error("planning tree has {nodes} leaves, budget is {budget}")]
    BudgetExceeded { nodes: u128, budget: u128 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("importance proposal assigns zero probability to a supported pair")]
    ZeroProbabilityProposal,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidModel(msg.into())
}
