//! Weight-space merging of a base checkpoint with its fine-tune.
//!
//! Two routes produce the same family of models:
//!
//! * [`interpolate`]: `(1 - alpha) * base + alpha * ft` for every tensor.
//! * [`apply_lora`]: `base + alpha * s * (B @ A)` for every adapted weight,
//!   with `s = scale_numerator / rank`.
//!
//! When `ft = base + s * (B @ A)` the two agree for every `alpha`, which
//! [`equivalence_report`] checks numerically. All arithmetic happens in
//! `f32` with `f64` accumulation; results are quantized once, on output.

mod equivalence;
mod lora;
mod ops;
mod sweep;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensorstore::{DType, TensorError};

pub use equivalence::{equivalence_report, EquivalenceRow};
pub use lora::{match_names, AdapterConfig, LoraAdapter, LoraPair, NameRule, PairBinding};
pub use ops::{apply_delta, apply_lora, interpolate, interpolate_values, lora_delta, write_merged};
pub use sweep::{
    format_alpha, materialize, read_sweep_manifest, sweep, MergeInput, MergeSpec, SweepEntry, SweepOptions,
    ALPHA_PLACEHOLDER, SWEEP_MANIFEST,
};

#[derive(Debug, Error)]
pub enum MergeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("tensor {name:?} has shape {base:?} in the base but {other:?} in the other checkpoint")]
    ShapeMismatch {
        name: String,
        base: Vec<usize>,
        other: Vec<usize>,
    },
    #[error("tensor name sets differ: only in base {only_in_base:?}, only in other {only_in_other:?}")]
    NameSetMismatch {
        only_in_base: Vec<String>,
        only_in_other: Vec<String>,
    },
    #[error("adapter target {0:?} does not resolve to a base tensor")]
    UnresolvedTarget(String),
    #[error("rank mismatch: {0}")]
    RankMismatch(String),
    #[error("adapter module {0:?} has only one of lora_A / lora_B")]
    OrphanHalf(String),
    #[error("two adapter pairs patch the same target {0:?}")]
    DuplicateTarget(String),
    #[error("alpha {0} is outside [0, 1]; pass --extrapolate to allow it")]
    AlphaOutOfRange(f64),
    #[error("invalid merge spec: {0}")]
    InvalidSpec(String),
    #[error("output {0} already exists")]
    OutputExists(PathBuf),
    #[error("{0}")]
    ModeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MergeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// Whole-weight interpolation between two checkpoints.
    #[serde(rename = "interp", alias = "interpolate")]
    Interpolate,
    /// Base plus an alpha-rescaled LoRA update.
    #[serde(rename = "lora", alias = "lora-rescale")]
    LoraRescale,
}

impl MergeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeMode::Interpolate => "interp",
            MergeMode::LoraRescale => "lora",
        }
    }
}

impl std::str::FromStr for MergeMode {
    type Err = MergeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interp" | "interpolate" => Ok(MergeMode::Interpolate),
            "lora" | "lora-rescale" => Ok(MergeMode::LoraRescale),
            other => Err(MergeError::InvalidSpec(format!("unknown merge mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MergeOptions {
    /// Output dtype for every tensor; `None` keeps each base tensor's dtype.
    pub output_dtype: Option<DType>,
    /// Worker threads for per-tensor work; 0 picks the rayon default.
    pub workers: usize,
    /// Permit alpha outside [0, 1].
    pub extrapolate: bool,
}

impl MergeOptions {
    pub fn check_alpha(&self, alpha: f64) -> Result<()> {
        if !alpha.is_finite() || (!self.extrapolate && !(0.0..=1.0).contains(&alpha)) {
            return Err(MergeError::AlphaOutOfRange(alpha));
        }
        Ok(())
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| MergeError::Io(std::io::Error::other(e)))
    }
}
