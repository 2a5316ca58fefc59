use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid noise schedule: {0}")]
    Schedule(String),

    #[error("step {t} out of range 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("sequence length {len} is not a positive multiple of block size {block_size}")]
    Partition { len: usize, block_size: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("division by zero: {0}")]
    Degenerate(String),

    #[error("evidence has zero probability under the joint: {0}")]
    Unreachable(String),

    #[error("instance too large: {0}")]
    Intractable(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("step budget of {budget} iterations exceeded ({masked} positions still masked)")]
    StepBudget {
        budget: usize,
        masked: usize,
        partial: Box<crate::decode::Generation>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
