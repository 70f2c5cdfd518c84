//! Small conditional recurrent captioner with hand-written gradients.

pub mod gru;
pub mod linalg;
pub mod optim;
pub mod params;
pub mod train;

pub use gru::{forward, generate, sequence_loss, target_probs, Tape};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ModelConfig, ModelParams};
pub use train::{dependence_trace, train, train_from, train_with, LogRow, TrainConfig, TrainLog, TrainOutcome};
