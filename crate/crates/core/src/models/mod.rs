//! Acoustic model, phonetic transformation network, and their training.

pub mod asr;
pub mod ptn;
pub mod train;

pub use asr::{AsrConfig, CnnAsr};
pub use ptn::{Ptn, PtnConfig};
pub use train::{evaluate_asr, evaluate_stack, train_asr, train_ptn, DevMetrics, EpochRecord, TrainConfig, TrainingLog};

#[cfg(test)]
mod tests;
