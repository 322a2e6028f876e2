use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor shape {shape:?} does not hold {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),

    #[error("second-order differentiation is disabled on this record")]
    SecondOrderDisabled,

    #[error("invalid time interval: {0}")]
    TimeOrder(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no reference path defined for task {0}")]
    NoReferencePath(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    /// Re-roots a configuration error under `prefix`, so `lr0: ...` becomes
    /// `train.lr0: ...`.
    pub fn nested(self, prefix: &str) -> Self {
        match self {
            Self::Config(m) => Self::Config(alloc::format!("{prefix}.{m}")),
            other => Self::Config(alloc::format!("{prefix}: {other}")),
        }
    }
}
