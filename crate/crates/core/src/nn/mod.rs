//! Small deterministic CPU network engine: layers, two-stream networks with a
//! late-fusion head, softmax cross-entropy, momentum SGD and checkpoints.

mod checkpoint;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Architecture, Network,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::{softmax, Cache, Init, Layer, LayerSpec};
pub use loss::{nll_loss, one_hot, predict, softmax_cross_entropy};
pub use network::{FusionArch, FusionNet, Sequential, StreamArch, StreamNet};
pub use optim::{sgd_step, SgdState};
pub use tensor::Tensor;
pub use train::{
    train_fusion, train_stream, write_loss_csv, LossRecord, PairedSamples, Phase, Samples,
    TrainConfig,
};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("stream still carries its classification head; train it and discard the head first")]
    NotPretrained,
    #[error("no training data")]
    EmptyData,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("sample loading failed: {0}")]
    Data(String),
}
