use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use super::{numel, CheckpointIndex, DType, Result, TensorEntry, TensorError};

pub const METADATA_KEY: &str = "__metadata__";

/// Upper bound on the JSON header size, mirroring the reference implementation.
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Accept unused payload bytes between or after tensors. Files written by
    /// this crate never contain gaps.
    pub allow_gaps: bool,
}

/// Parses and validates the header of a complete in-memory checkpoint.
pub fn parse_header(file_bytes: &[u8]) -> Result<CheckpointIndex> {
    parse_header_from(file_bytes, file_bytes.len() as u64, ParseOptions::default())
}

/// Parses the header from `reader`, which must be positioned at the file
/// start. Only the length prefix and the JSON header are read; payload
/// validation uses `file_len` alone.
pub fn parse_header_from<R: Read>(
    mut reader: R,
    file_len: u64,
    opts: ParseOptions,
) -> Result<CheckpointIndex> {
    let mut len_buf = [0u8; 8];
    if file_len < 8 {
        return Err(TensorError::MalformedHeader(format!(
            "bytes 0..8: file is {file_len} bytes, too short for the header length prefix"
        )));
    }
    reader.read_exact(&mut len_buf).map_err(|e| {
        TensorError::MalformedHeader(format!("bytes 0..8: cannot read header length: {e}"))
    })?;
    let header_len = u64::from_le_bytes(len_buf);
    if header_len > MAX_HEADER_LEN || header_len > file_len - 8 {
        return Err(TensorError::MalformedHeader(format!(
            "bytes 0..8: header length {header_len} exceeds file size {file_len}"
        )));
    }
    let mut json = vec![0u8; header_len as usize];
    reader.read_exact(&mut json)?;
    let payload_origin = 8 + header_len;
    let payload_len = file_len - payload_origin;

    let text = std::str::from_utf8(&json).map_err(|e| {
        TensorError::MalformedHeader(format!(
            "byte {}: header is not UTF-8",
            8 + e.valid_up_to()
        ))
    })?;
    let raw: RawHeader = serde_json::from_str(text).map_err(|e| {
        let at = if e.line() == 1 {
            format!("byte {}", 8 + e.column().saturating_sub(1))
        } else {
            format!("line {} column {}", e.line(), e.column())
        };
        TensorError::MalformedHeader(format!("{at}: {e}"))
    })?;

    let mut entries = BTreeMap::new();
    let mut metadata = None;
    for (key, value) in raw.0 {
        if key == METADATA_KEY {
            if metadata.is_some() {
                return Err(TensorError::DuplicateName(key));
            }
            let map: BTreeMap<String, String> = serde_json::from_value(value).map_err(|e| {
                TensorError::MalformedHeader(format!("{METADATA_KEY} must map strings to strings: {e}"))
            })?;
            metadata = Some(map);
            continue;
        }
        let info: RawEntry = serde_json::from_value(value)
            .map_err(|e| TensorError::MalformedHeader(format!("tensor {key:?}: {e}")))?;
        let entry = info.validate(&key)?;
        if entries.insert(key.clone(), entry).is_some() {
            return Err(TensorError::DuplicateName(key));
        }
    }

    check_layout(&entries, payload_len, opts)?;

    Ok(CheckpointIndex {
        entries,
        metadata: metadata.unwrap_or_default(),
        header_len,
        payload_origin,
    })
}

fn check_layout(
    entries: &BTreeMap<String, TensorEntry>,
    payload_len: u64,
    opts: ParseOptions,
) -> Result<()> {
    let mut spans: Vec<_> = entries.values().collect();
    spans.sort_by_key(|e| e.data_offsets);
    let mut cursor = 0u64;
    for e in spans {
        let (begin, end) = e.data_offsets;
        if begin < cursor {
            return Err(TensorError::Overlap(format!(
                "tensor {:?} at [{begin}, {end}) overlaps preceding data ending at {cursor}",
                e.name
            )));
        }
        if begin > cursor && !opts.allow_gaps {
            return Err(TensorError::Overlap(format!(
                "gap of {} bytes before tensor {:?} at [{begin}, {end})",
                begin - cursor,
                e.name
            )));
        }
        cursor = end;
    }
    if cursor > payload_len {
        return Err(TensorError::TruncatedPayload(format!(
            "header declares {cursor} payload bytes but only {payload_len} are present"
        )));
    }
    if cursor < payload_len && !opts.allow_gaps {
        return Err(TensorError::Overlap(format!(
            "{} trailing payload bytes are not covered by any tensor",
            payload_len - cursor
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    dtype: String,
    shape: Vec<u64>,
    data_offsets: (u64, u64),
}

impl RawEntry {
    fn validate(self, name: &str) -> Result<TensorEntry> {
        let dtype: DType = self.dtype.parse().map_err(|_| {
            TensorError::MalformedHeader(format!("tensor {name:?}: unknown dtype {:?}", self.dtype))
        })?;
        let shape = self
            .shape
            .iter()
            .map(|&d| usize::try_from(d))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| TensorError::MalformedHeader(format!("tensor {name:?}: dimension too large")))?;
        let (begin, end) = self.data_offsets;
        if begin > end {
            return Err(TensorError::MalformedHeader(format!(
                "tensor {name:?}: data_offsets [{begin}, {end}) are reversed"
            )));
        }
        let expected = shape
            .iter()
            .try_fold(dtype.byte_width() as u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| TensorError::MalformedHeader(format!("tensor {name:?}: shape overflows")))?;
        if end - begin != expected {
            return Err(TensorError::MalformedHeader(format!(
                "tensor {name:?}: {dtype} shape {shape:?} needs {expected} bytes, data_offsets span {}",
                end - begin
            )));
        }
        debug_assert_eq!(expected, (numel(&shape) * dtype.byte_width()) as u64);
        Ok(TensorEntry {
            name: name.to_string(),
            dtype,
            shape,
            data_offsets: (begin, end),
        })
    }
}

/// Top-level header object with keys kept in document order so duplicates
/// can be detected (serde_json maps silently keep the last value).
struct RawHeader(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for RawHeader {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct HeaderVisitor;

        impl<'de> Visitor<'de> for HeaderVisitor {
            type Value = RawHeader;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object mapping tensor names to tensor info")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawHeader, A::Error> {
                let mut out = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    out.push((k, v));
                }
                Ok(RawHeader(out))
            }
        }

        deserializer
            .deserialize_map(HeaderVisitor)
            .map_err(|e: D::Error| de::Error::custom(e))
    }
}
