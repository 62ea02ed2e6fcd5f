use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward: non-finite gradient at node {node} ({op})")]
    NonFiniteGradient { node: usize, op: &'static str },

    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),

    #[error("sequence of {len} tokens exceeds max-seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} outside vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("top-k {k} exceeds vocabulary size {vocab}")]
    TopKTooLarge { k: usize, vocab: usize },

    #[error("vocabulary mismatch between teacher and student")]
    VocabularyMismatch,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("response is empty")]
    EmptyResponse,

    #[error("stale batch: rollouts from policy version {batch}, student is at version {current}")]
    StaleBatch { batch: u64, current: u64 },

    #[error("environment: {0}")]
    Environment(String),

    #[error("experience: {0}")]
    Experience(String),

    #[error("teacher pretraining stopped after {steps} steps without reaching the threshold; curve: {curve:?}")]
    ThresholdUnreachable {
        steps: usize,
        /// (step, accuracy with context, accuracy without context)
        curve: Vec<(usize, f64, f64)>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
