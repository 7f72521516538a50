//! Cross-lingual symbol mapping through a phonetic transformation network.

pub mod checkpoint;
pub mod ctc;
pub mod digest;
pub mod error;
pub mod evaluation;
pub mod gradsuite;
pub mod inventory;
pub mod mapping;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod posteriorgram;
pub mod synth;

pub use error::{CheckpointError, Error, Result};
