use thiserror::Error;

/// Errors raised by the mirror-learning library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite logit at state {state}, index {index}")]
    NonFiniteLogit { state: usize, index: usize },

    #[error("sampling weight is zero at decision state {state}")]
    ZeroSamplingWeight { state: usize },

    #[error("empty sample batch")]
    EmptyBatch,

    #[error("corrupt replay buffer: entry {index} stores historical probability {prob}")]
    CorruptBuffer { index: usize, prob: f64 },

    #[error("policy grid has {count} vertices, budget is {limit}")]
    VertexBudget { count: usize, limit: usize },

    #[error("path vertices {from} -> {to} are not joined by an edge")]
    DisconnectedPath { from: usize, to: usize },

    #[error("invariant violated at iteration {iter}: {message}\n{dump}")]
    InvariantViolation {
        iter: usize,
        message: String,
        dump: String,
    },

    #[error("unknown name `{name}` for {vocabulary}")]
    UnknownName {
        vocabulary: &'static str,
        name: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
