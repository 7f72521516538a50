//! Dense tensors, layers with hand-written backward passes, and Adam.

pub mod adam;
pub mod batchnorm;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::RunningStats;
pub use gradcheck::{grad_check, GradCheckReport, Objective};
pub use layers::{BatchNorm, Conv1d, Dropout, Linear, Module, Param, Relu};
pub use ops::{conv1d_time, dropout, linear, log_softmax_rows, relu, softmax_rows, Mode};
pub use tensor::Tensor;

#[cfg(test)]
mod grad_tests;
