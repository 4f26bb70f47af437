use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown item {item} (dataset has {items} items)")]
    UnknownItem { item: usize, items: usize },

    #[error("neuron {0} is out of range or already deleted")]
    DeadNeuron(usize),

    #[error("operation requires a linear network")]
    NotLinear,

    #[error("non-finite weights after gradient step at epoch {epoch} (step size {learning_rate} too large)")]
    NonFinite { epoch: usize, learning_rate: f64 },

    #[error("training diverged at epoch {epoch}: loss {loss:.6e} exceeds 10x its minimum {min_loss:.6e}")]
    Diverged {
        epoch: usize,
        loss: f64,
        min_loss: f64,
    },

    #[error("step size {learning_rate} failed the stability probe: loss rose from {before:.6e} to {after:.6e}")]
    UnstableStep {
        learning_rate: f64,
        before: f64,
        after: f64,
    },

    #[error("rank {rank} out of range 0..={max}")]
    Rank { rank: usize, max: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
