use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): expected {expected}, got {actual}")]
    Shape {
        node: usize,
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("graph has not been evaluated")]
    NotEvaluated,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("division by zero at node {0}")]
    DivisionByZero(usize),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
