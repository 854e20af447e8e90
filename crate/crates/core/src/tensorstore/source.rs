use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use super::header::{parse_header_from, ParseOptions};
use super::{CheckpointIndex, Result, Tensor, TensorError};

/// Where payload bytes come from. Reads are positional so distinct tensors
/// can be fetched concurrently.
#[derive(Debug)]
pub enum TensorSource {
    Memory(Vec<u8>),
    File(File),
}

impl TensorSource {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        match self {
            TensorSource::Memory(bytes) => {
                let start = usize::try_from(offset).map_err(|_| io::ErrorKind::UnexpectedEof)?;
                let src = start
                    .checked_add(buf.len())
                    .and_then(|end| bytes.get(start..end))
                    .ok_or(io::ErrorKind::UnexpectedEof)?;
                buf.copy_from_slice(src);
                Ok(())
            }
            TensorSource::File(file) => read_exact_at(file, offset, buf),
        }
    }
}

#[cfg(unix)]
fn read_exact_at(file: &File, offset: u64, buf: &mut [u8]) -> io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut offset: u64, mut buf: &mut [u8]) -> io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}

/// A parsed index paired with its payload.
#[derive(Debug)]
pub struct Checkpoint {
    pub index: CheckpointIndex,
    pub path: Option<PathBuf>,
    source: TensorSource,
}

impl Checkpoint {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, ParseOptions::default())
    }

    pub fn open_with(path: impl AsRef<Path>, opts: ParseOptions) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let index = parse_header_from(&file, len, opts)?;
        Ok(Checkpoint {
            index,
            path: Some(path.to_path_buf()),
            source: TensorSource::File(file),
        })
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        Self::from_bytes_with(bytes, ParseOptions::default())
    }

    pub fn from_bytes_with(bytes: Vec<u8>, opts: ParseOptions) -> Result<Self> {
        let index = parse_header_from(&bytes[..], bytes.len() as u64, opts)?;
        Ok(Checkpoint {
            index,
            path: None,
            source: TensorSource::Memory(bytes),
        })
    }

    /// Raw little-endian payload bytes of one tensor.
    pub fn read_raw(&self, name: &str) -> Result<Vec<u8>> {
        let entry = self.index.get(name)?;
        let (begin, end) = entry.data_offsets;
        let mut buf = vec![0u8; (end - begin) as usize];
        self.source
            .read_at(self.index.payload_origin + begin, &mut buf)
            .map_err(|e| match e.kind() {
                io::ErrorKind::UnexpectedEof => TensorError::TruncatedPayload(format!(
                    "tensor {name:?} at payload [{begin}, {end}) runs past the end of the source"
                )),
                _ => TensorError::Io(e),
            })?;
        Ok(buf)
    }

    /// Decodes one tensor into working precision.
    pub fn read_tensor(&self, name: &str) -> Result<Tensor> {
        let entry = self.index.get(name)?;
        let raw = self.read_raw(name)?;
        Ok(Tensor {
            shape: entry.shape.clone(),
            values: entry.dtype.decode(&raw),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorstore::{write_checkpoint, DType, EncodedTensor};
    use std::collections::BTreeMap;

    fn sample() -> Vec<u8> {
        let t = Tensor::new(vec![2], vec![1.5, -2.0]).unwrap();
        let entries = vec![
            EncodedTensor::encode("a", &t, DType::F32).unwrap(),
            EncodedTensor::encode("b", &t, DType::BF16).unwrap(),
        ];
        let mut out = Vec::new();
        write_checkpoint(&entries, &BTreeMap::new(), &mut out).unwrap();
        out
    }

    #[test]
    fn reads_from_memory_and_file() {
        let bytes = sample();
        let mem = Checkpoint::from_bytes(bytes.clone()).unwrap();
        assert_eq!(mem.read_tensor("a").unwrap().values, vec![1.5, -2.0]);
        assert_eq!(mem.read_tensor("b").unwrap().values, vec![1.5, -2.0]);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.safetensors");
        std::fs::write(&p, &bytes).unwrap();
        let f = Checkpoint::open(&p).unwrap();
        assert_eq!(f.read_tensor("b").unwrap().values, vec![1.5, -2.0]);
        assert!(matches!(f.read_tensor("zz"), Err(TensorError::UnknownTensor(_))));
    }

    #[test]
    fn truncated_source_detected_on_read() {
        let bytes = sample();
        let full = Checkpoint::from_bytes(bytes.clone()).unwrap();
        let truncated = Checkpoint {
            index: full.index.clone(),
            path: None,
            source: TensorSource::Memory(bytes[..bytes.len() - 1].to_vec()),
        };
        assert!(matches!(truncated.read_tensor("b"), Err(TensorError::TruncatedPayload(_))));
    }
}
