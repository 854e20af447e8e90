//! Checkpoint interpolation, LoRA rescaling, and a prompt-robustness
//! evaluation pipeline for audio-language model merges.

pub mod harness;
pub mod merge;
pub mod prompt;
pub mod report;
pub mod scoring;
#[cfg(feature = "stub")]
pub mod stub;
pub mod tensorstore;
