use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate link: endpoints coincide")]
    DegenerateLink,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration is not quantized to {expected} bits")]
    NotQuantized { expected: u32 },

    #[error("phase index {index} out of range for {bits}-bit quantization")]
    IndexOutOfRange { index: u32, bits: u32 },

    #[error("row {row} of the transition matrix sums to {sum} (expected 1)")]
    NotStochastic { row: usize, sum: f64 },

    #[error("chain is reducible: closed class {states:?} does not reach every state")]
    Reducible { states: Vec<usize> },

    #[error("stationary solve failed: {0}")]
    Solve(String),

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
