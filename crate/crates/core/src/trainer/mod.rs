//! Optimization loop, evaluation, and checkpoints.

pub mod checkpoint;
pub mod optim;
pub mod train;

pub use checkpoint::{config_hash, Checkpoint, StoredTensor, CHECKPOINT_VERSION};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use train::{evaluate, fit, EpochLog, EpochStats, FitOutcome, TrainConfig, Trainer};
