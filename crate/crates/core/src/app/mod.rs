//! Runnable commands: configuration, checkpoints, training, inference, evaluation,
//! robustness sweeps and dataset synthesis.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod infer;
pub mod tasks;
pub mod train;
