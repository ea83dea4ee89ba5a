//! Dual-stream vision-language model for dynamic facial expression
//! recognition: layered cross-modal prompts injected into frozen transformer
//! towers, and text-guided multi-head aggregation of temporal visual features.

pub mod cli;
pub mod encoder;
pub mod error;
pub mod htpc;
pub mod init;
pub mod lsea;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
