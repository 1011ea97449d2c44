//! Graph-level type classifier over encoded variable semantic graphs.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod tensor;

use thiserror::Error;

pub use checkpoint::{vocab_hash, Checkpoint};
pub use model::{
    backward, evaluate_loss, forward, init_params, loss, loss_and_grad, predict, Aggregation,
    EdgeWeighting, Forward, GgnnConfig, ModelParams,
};
pub use optim::{train_step, Adam, AdamConfig};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum GgnnError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("label {0} is not a valid class")]
    InvalidLabel(usize),
    #[error("graph has no label")]
    MissingLabel,
    #[error("numeric failure: {0}")]
    NonFinite(String),
    #[error("checkpoint was trained against vocabulary {found}, not {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
}
