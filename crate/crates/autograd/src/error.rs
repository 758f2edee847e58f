use thiserror::Error;

/// Errors raised by tensor construction and graph operators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {axis} expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: expected rank {expected}, got dims {dims:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        dims: Vec<usize>,
    },

    #[error("dims {dims:?} hold {expected} values but {actual} were supplied")]
    Length {
        dims: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("{op} produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("backward requires a scalar loss, got dims {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("gradients already populated; call zero_grad before another backward pass")]
    GradientsPresent,

    #[error("unknown variable id {0}")]
    UnknownVar(usize),
}

pub type Result<T> = std::result::Result<T, TensorError>;
