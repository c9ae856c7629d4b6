use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op} (node {node:?}): {detail}")]
    Shape {
        op: &'static str,
        node: Option<usize>,
        detail: String,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("node {0} was not created with requires_grad")]
    NotDifferentiable(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training diverged in {stage} at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        stage: &'static str,
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, node: Option<usize>, detail: String) -> Self {
        Error::Shape { op, node, detail }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
