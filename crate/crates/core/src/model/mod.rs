//! Detector model: network, training loops, ranking metric, checkpoints.

mod checkpoint;
mod metrics;
mod mlp;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use metrics::{auprc, bce_loss};
pub use mlp::{clip_l2, detector_input, l2_norm, Mlp, DETECTOR_DIMS, FLAG_INPUT};
pub use train::{
    batch_schedule, learning_rate, score_with_true_flags, train_centralized,
    train_centralized_traced, train_plain, TrainConfig, TrainData,
};

/// Model-layer errors.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("metric needs at least one positive label")]
    NoPositives,
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
