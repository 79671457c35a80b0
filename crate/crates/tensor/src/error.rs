use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("autograd error: {0}")]
    Autograd(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad tensor dump: {0}")]
    BadDump(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

impl TensorError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch { op, detail: detail.into() }
    }

    pub fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::InvalidArgument { op, detail: detail.into() }
    }
}
