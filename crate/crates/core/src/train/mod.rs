//! Training with L1 loss and Adam, and benchmark evaluation.

mod adam;
mod config;
mod eval;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use config::{lr_at, DataConfig, RunConfig, TrainConfig, DATA_KEYS, TRAIN_KEYS};
pub use eval::{evaluate, score, EvalReport, ImageScore, Upscaler};
pub use trainer::{train_in_dir, RunDir, StepRecord, Trainer};
