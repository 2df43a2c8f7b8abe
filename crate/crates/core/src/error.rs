use thiserror::Error;

/// Errors produced anywhere in the recovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unsupported PA order {0}")]
    UnsupportedOrder(usize),

    #[error("PA order {order} too large for {n} grid points")]
    OrderTooLarge { order: usize, n: usize },

    #[error("degenerate PA stencil: normalization factor is zero")]
    DegenerateStencil,

    #[error("linear system is singular")]
    Singular,

    #[error("initial state has non-finite log-posterior")]
    NonFiniteInitialState,

    #[error("series is constant; autocorrelation undefined")]
    ConstantSeries,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
