use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("keypoint ({x}, {y}) outside image bounds {width}x{height}")]
    Bounds {
        x: f64,
        y: f64,
        width: f64,
        height: f64,
    },

    #[error("forward function is not deterministic: baseline {first} vs {second}")]
    Determinism { first: f64, second: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error in record {id}: {reason}")]
    Ingestion { id: String, reason: String },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("checkpoint incompatible with configuration: {0}")]
    Compatibility(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Dimension { op, lhs, rhs }
    }
}
