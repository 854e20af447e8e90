//! Reader and writer for the single-file safetensors checkpoint container.
//!
//! Layout: an 8-byte little-endian header length `N`, `N` bytes of UTF-8
//! JSON mapping tensor names to `{"dtype","shape","data_offsets"}` (plus an
//! optional `"__metadata__"` string map), then the raw payload. Offsets are
//! relative to the first payload byte.

mod dtype;
mod header;
mod source;
mod writer;

use std::collections::BTreeMap;
use std::io;

use thiserror::Error;

pub use dtype::DType;
pub use header::{parse_header, parse_header_from, ParseOptions, METADATA_KEY};
pub use source::{Checkpoint, TensorSource};
pub use writer::{write_checkpoint, EncodedTensor};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("invalid payload layout: {0}")]
    Overlap(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("unknown tensor {0:?}")]
    UnknownTensor(String),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("tensor {name:?}: shape {shape:?} needs {expected} values, got {actual}")]
    ValueCount {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Number of elements for a shape; the empty shape is a scalar.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Half-open `[begin, end)` relative to the payload start.
    pub data_offsets: (u64, u64),
}

impl TensorEntry {
    pub fn byte_len(&self) -> u64 {
        self.data_offsets.1 - self.data_offsets.0
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }
}

/// Parsed and validated checkpoint header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointIndex {
    pub entries: BTreeMap<String, TensorEntry>,
    /// Contents of `__metadata__`; empty when the header carries none.
    pub metadata: BTreeMap<String, String>,
    pub header_len: u64,
    /// Absolute file offset of the first payload byte (`8 + header_len`).
    pub payload_origin: u64,
}

impl CheckpointIndex {
    pub fn get(&self, name: &str) -> Result<&TensorEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| TensorError::UnknownTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries in payload order.
    pub fn by_offset(&self) -> Vec<&TensorEntry> {
        let mut v: Vec<_> = self.entries.values().collect();
        v.sort_by_key(|e| (e.data_offsets, e.name.as_str()));
        v
    }

    pub fn payload_len(&self) -> u64 {
        self.entries
            .values()
            .map(|e| e.data_offsets.1)
            .max()
            .unwrap_or(0)
    }
}

/// A dense row-major tensor in working precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let expected = numel(&shape);
        if values.len() != expected {
            return Err(TensorError::ValueCount {
                name: String::new(),
                shape,
                expected,
                actual: values.len(),
            });
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Bitwise equality, treating NaNs with identical payloads as equal.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
