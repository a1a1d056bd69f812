//! Loss, optimizers, data ingestion, checkpoints and the training loop.
//!
//! Every learnable tensor is Euclidean (FC weights and offsets, BN bias in
//! the tangent space at the origin, `log gamma`), so plain Adam or SGD
//! applies without retraction.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod loss;
pub mod optim;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{DataSource, TrainConfig};
pub use data::{
    augment, crop_flip, load_cifar10, load_cifar10_file, synthetic_splits, Cifar10, Dataset,
};
pub use loss::{accuracy, cross_entropy};
pub use optim::{adam_step, optimizer_step, sgd_step, OptimizerKind, OptimizerState};
pub use train::{
    evaluate, load_data, strip_wall_time, synthetic_data, train, train_on, EpochMetrics,
    TrainOutcome, CSV_HEADER, SYNTHETIC_TEST, SYNTHETIC_TRAIN,
};

#[cfg(test)]
mod tests;
