use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("transport solver failed: {0}")]
    Solver(String),

    #[error("input is already classified as the desired class")]
    AlreadyDesiredClass,

    #[error("degenerate model: weight vector has zero norm")]
    DegenerateModel,

    #[error("counterfactual search did not converge for input {x:?}")]
    CounterfactualNotFound { x: Vec<f64> },

    #[error("counterfactual for input {x:?} is not classified as the desired class")]
    InvalidCounterfactual { x: Vec<f64> },

    #[error("malformed query response: {0}")]
    MalformedResponse(&'static str),
}
