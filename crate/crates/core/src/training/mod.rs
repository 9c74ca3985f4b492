//! Loss, SSIM, learning-rate schedule, optimizers and the training loop.

pub mod loss;
pub mod optim;
pub mod schedule;
pub mod ssim;
pub mod train;

pub use loss::{loss_total, LossConfig, LossValue};
pub use optim::{Optimizer, OptimizerKind};
pub use schedule::{one_cycle_lr, OneCycleSchedule};
pub use ssim::{ssim, ssim_value, SsimConfig};
pub use train::{
    epochs_to_reach, history_to_csv, initial_mode, load_checkpoint, save_checkpoint, train, trainable_parameters,
    CheckpointMeta, EpochMetrics, InitStrategy, TrainConfig, TrainMode, TrainOutcome,
};
