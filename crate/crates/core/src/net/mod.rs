//! The yaw-regression network, its loss, optimizer and persistence.

pub mod adam;
pub mod checkpoint;
pub mod frozen;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod train;

pub use adam::{AdamParams, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use frozen::FrozenModel;
pub use loss::{cos_loss, cos_loss_grad, total_loss};
pub use model::{kaiming_init, GradientSet, Mode, MountNetModel, PARAMETER_COUNT};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("input must be (batch, >=20, 6), got length {len} with {channels} channels")]
    InputShape { len: usize, channels: usize },
    #[error("non-finite activation in {layer}")]
    NumericFault { layer: &'static str },
    #[error("cache, predictions and labels disagree in batch size")]
    CacheMismatch,
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        last_good: Box<MountNetModel>,
    },
    #[error("invalid training config: {0}")]
    Config(String),
}
