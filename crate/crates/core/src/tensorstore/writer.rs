use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::Serialize;

use super::header::METADATA_KEY;
use super::{numel, CheckpointIndex, DType, Result, Tensor, TensorEntry, TensorError};

/// A tensor already encoded to its on-disk byte representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl EncodedTensor {
    pub fn encode(name: impl Into<String>, tensor: &Tensor, dtype: DType) -> Result<Self> {
        let name = name.into();
        let expected = numel(&tensor.shape);
        if tensor.values.len() != expected {
            return Err(TensorError::ValueCount {
                name,
                shape: tensor.shape.clone(),
                expected,
                actual: tensor.values.len(),
            });
        }
        Ok(EncodedTensor {
            name,
            dtype,
            shape: tensor.shape.clone(),
            bytes: dtype.encode(&tensor.values),
        })
    }

    /// Wraps bytes copied verbatim from another checkpoint.
    pub fn raw(name: impl Into<String>, dtype: DType, shape: Vec<usize>, bytes: Vec<u8>) -> Result<Self> {
        let name = name.into();
        let expected = numel(&shape) * dtype.byte_width();
        if bytes.len() != expected {
            return Err(TensorError::ValueCount {
                name,
                shape,
                expected,
                actual: bytes.len(),
            });
        }
        Ok(EncodedTensor {
            name,
            dtype,
            shape,
            bytes,
        })
    }
}

/// Header values; field order is alphabetical so the JSON is canonical.
#[derive(Serialize)]
#[serde(untagged)]
enum HeaderValue<'a> {
    Tensor {
        data_offsets: [u64; 2],
        dtype: &'static str,
        shape: &'a [usize],
    },
    Metadata(&'a BTreeMap<String, String>),
}

/// Writes a checkpoint with tensors laid out contiguously in the given
/// order. The header is canonical JSON: sorted keys, no whitespace.
/// `__metadata__` is emitted only when `metadata` is non-empty.
pub fn write_checkpoint<W: Write>(
    entries: &[EncodedTensor],
    metadata: &BTreeMap<String, String>,
    mut sink: W,
) -> Result<CheckpointIndex> {
    let mut seen = HashSet::with_capacity(entries.len());
    for e in entries {
        if e.name == METADATA_KEY || !seen.insert(e.name.as_str()) {
            return Err(TensorError::DuplicateName(e.name.clone()));
        }
    }

    let mut header: BTreeMap<&str, HeaderValue<'_>> = BTreeMap::new();
    let mut index_entries = BTreeMap::new();
    let mut offset = 0u64;
    for e in entries {
        let end = offset + e.bytes.len() as u64;
        header.insert(
            &e.name,
            HeaderValue::Tensor {
                data_offsets: [offset, end],
                dtype: e.dtype.as_str(),
                shape: &e.shape,
            },
        );
        index_entries.insert(
            e.name.clone(),
            TensorEntry {
                name: e.name.clone(),
                dtype: e.dtype,
                shape: e.shape.clone(),
                data_offsets: (offset, end),
            },
        );
        offset = end;
    }
    if !metadata.is_empty() {
        header.insert(METADATA_KEY, HeaderValue::Metadata(metadata));
    }

    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| TensorError::MalformedHeader(e.to_string()))?;
    let header_len = header_bytes.len() as u64;

    sink.write_all(&header_len.to_le_bytes())?;
    sink.write_all(&header_bytes)?;
    for e in entries {
        sink.write_all(&e.bytes)?;
    }
    sink.flush()?;

    Ok(CheckpointIndex {
        entries: index_entries,
        metadata: metadata.clone(),
        header_len,
        payload_origin: 8 + header_len,
    })
}
