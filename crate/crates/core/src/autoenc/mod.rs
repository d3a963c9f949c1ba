//! Convolutional autoencoder over three-view MIP stacks: layers with
//! hand-written gradients, the BCE + Dice loss, Adam with warm-restart
//! cosine schedule, cross-validated training and checkpoints.

mod checkpoint;
mod layers;
mod loss;
mod model;
mod optim;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, ParamEntry};
pub use layers::{BatchNorm2d, Cache, Conv2d, ConvTranspose2x2, Layer, Param};
pub use loss::{loss, loss_and_logit_grad, LossParts, DICE_EPS, PROB_CLAMP};
pub use model::{stacks_to_tensor, ArchitectureDescriptor, Autoencoder, BottleneckFeature, ForwardOutput};
pub use optim::{Adam, CosineWarmRestarts};
pub use tensor::Tensor;
pub use train::{evaluate_loss, fine_tune, fit_epochs, stratified_folds, train_cv, EpochRecord, FoldResult, TrainConfig, TrainOutput};

#[derive(Debug, Error)]
pub enum AutoencError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
