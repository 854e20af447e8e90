use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;

use super::{LoraAdapter, LoraPair, MergeError, MergeOptions, Result};
use crate::tensorstore::{write_checkpoint, Checkpoint, CheckpointIndex, EncodedTensor, Tensor};

/// Elementwise `(1 - alpha) * base + alpha * ft`, evaluated in f64.
///
/// The endpoints return an input unchanged so that NaN/Inf elements survive
/// and alpha = 0 / 1 reproduce their model bit for bit.
pub fn interpolate_values(base: &[f32], ft: &[f32], alpha: f64) -> Vec<f32> {
    debug_assert_eq!(base.len(), ft.len());
    if alpha == 0.0 {
        return base.to_vec();
    }
    if alpha == 1.0 {
        return ft.to_vec();
    }
    let keep = 1.0 - alpha;
    base.iter()
        .zip(ft)
        .map(|(&b, &f)| (keep * b as f64 + alpha * f as f64) as f32)
        .collect()
}

/// Dense `scale * (B @ A)` in row-major `d_out x d_in`, accumulated in f64.
pub fn lora_delta(pair: &LoraPair) -> Vec<f64> {
    let (d_out, d_in, rank) = (pair.d_out(), pair.d_in(), pair.rank);
    let scale = pair.scale();
    let a = &pair.a.values;
    let b = &pair.b.values;
    let mut out = vec![0.0f64; d_out * d_in];
    for (i, row) in out.chunks_exact_mut(d_in.max(1)).enumerate().take(d_out) {
        for k in 0..rank {
            let bik = b[i * rank + k] as f64;
            let a_row = &a[k * d_in..(k + 1) * d_in];
            for (o, &akj) in row.iter_mut().zip(a_row) {
                *o += bik * akj as f64;
            }
        }
        row.iter_mut().for_each(|o| *o *= scale);
    }
    out
}

/// `base + alpha * delta`, rounded once to f32. Alpha = 0 returns `base`.
pub fn apply_delta(base: &[f32], delta: &[f64], alpha: f64) -> Vec<f32> {
    debug_assert_eq!(base.len(), delta.len());
    if alpha == 0.0 {
        return base.to_vec();
    }
    base.iter()
        .zip(delta)
        .map(|(&w, &d)| (w as f64 + alpha * d) as f32)
        .collect()
}

fn check_same_layout(base: &CheckpointIndex, other: &CheckpointIndex) -> Result<()> {
    let only_in_base: Vec<String> = base.names().filter(|n| !other.contains(n)).map(String::from).collect();
    let only_in_other: Vec<String> = other.names().filter(|n| !base.contains(n)).map(String::from).collect();
    if !only_in_base.is_empty() || !only_in_other.is_empty() {
        return Err(MergeError::NameSetMismatch {
            only_in_base,
            only_in_other,
        });
    }
    for (name, e) in &base.entries {
        let o = &other.entries[name];
        if e.shape != o.shape {
            return Err(MergeError::ShapeMismatch {
                name: name.clone(),
                base: e.shape.clone(),
                other: o.shape.clone(),
            });
        }
    }
    Ok(())
}

/// Interpolates every tensor of `base` and `ft`. Output tensors follow the
/// base payload order.
pub fn interpolate(base: &Checkpoint, ft: &Checkpoint, alpha: f64, opts: &MergeOptions) -> Result<Vec<EncodedTensor>> {
    opts.check_alpha(alpha)?;
    check_same_layout(&base.index, &ft.index)?;
    let order = base.index.by_offset();
    opts.pool()?.install(|| {
        order
            .par_iter()
            .map(|entry| {
                let out_dtype = opts.output_dtype.unwrap_or(entry.dtype);
                let ft_entry = &ft.index.entries[&entry.name];
                // Endpoints with matching dtypes are byte copies.
                if (alpha == 0.0 || alpha == 1.0) && out_dtype == entry.dtype && out_dtype == ft_entry.dtype {
                    let src = if alpha == 0.0 { base } else { ft };
                    return Ok(EncodedTensor::raw(&entry.name, out_dtype, entry.shape.clone(), src.read_raw(&entry.name)?)?);
                }
                let b = base.read_tensor(&entry.name)?;
                let f = ft.read_tensor(&entry.name)?;
                let merged = Tensor {
                    shape: b.shape,
                    values: interpolate_values(&b.values, &f.values, alpha),
                };
                Ok(EncodedTensor::encode(&entry.name, &merged, out_dtype)?)
            })
            .collect()
    })
}

/// Adds `alpha` times each adapter update to its base weight. Tensors not
/// targeted by the adapter are copied from the base.
pub fn apply_lora(base: &Checkpoint, adapter: &LoraAdapter, alpha: f64, opts: &MergeOptions) -> Result<Vec<EncodedTensor>> {
    opts.check_alpha(alpha)?;
    adapter.check_against(&base.index)?;
    let order = base.index.by_offset();
    opts.pool()?.install(|| {
        order
            .par_iter()
            .map(|entry| {
                let out_dtype = opts.output_dtype.unwrap_or(entry.dtype);
                match adapter.pair_for(&entry.name) {
                    Some(pair) if alpha != 0.0 => {
                        let w = base.read_tensor(&entry.name)?;
                        let patched = Tensor {
                            values: apply_delta(&w.values, &lora_delta(pair), alpha),
                            shape: w.shape,
                        };
                        Ok(EncodedTensor::encode(&entry.name, &patched, out_dtype)?)
                    }
                    _ if out_dtype == entry.dtype => Ok(EncodedTensor::raw(
                        &entry.name,
                        out_dtype,
                        entry.shape.clone(),
                        base.read_raw(&entry.name)?,
                    )?),
                    _ => Ok(EncodedTensor::encode(&entry.name, &base.read_tensor(&entry.name)?, out_dtype)?),
                }
            })
            .collect()
    })
}

/// Writes merged tensors to `path` and returns the file's SHA-256 (hex).
pub fn write_merged(path: &Path, tensors: &[EncodedTensor], metadata: &BTreeMap<String, String>) -> Result<String> {
    use sha2::{Digest, Sha256};
    use std::io::Write;

    struct HashingWriter<W> {
        inner: W,
        hasher: Sha256,
    }
    impl<W: Write> Write for HashingWriter<W> {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            let n = self.inner.write(buf)?;
            self.hasher.update(&buf[..n]);
            Ok(n)
        }
        fn flush(&mut self) -> std::io::Result<()> {
            self.inner.flush()
        }
    }

    let tmp = path.with_extension("partial");
    let mut w = HashingWriter {
        inner: BufWriter::new(File::create(&tmp)?),
        hasher: Sha256::new(),
    };
    write_checkpoint(tensors, metadata, &mut w)?;
    let digest = hex::encode(w.hasher.finalize());
    w.inner.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(digest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorstore::DType;

    fn ckpt(tensors: &[(&str, Tensor, DType)]) -> Checkpoint {
        let enc: Vec<_> = tensors
            .iter()
            .map(|(n, t, d)| EncodedTensor::encode(*n, t, *d).unwrap())
            .collect();
        let mut bytes = Vec::new();
        write_checkpoint(&enc, &Default::default(), &mut bytes).unwrap();
        Checkpoint::from_bytes(bytes).unwrap()
    }

    fn t(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let base = ckpt(&[("w", t(&[2], &[0.0, f32::NAN]), DType::F32)]);
        let ft = ckpt(&[("w", t(&[2], &[2.0, f32::INFINITY]), DType::F32)]);
        let opts = MergeOptions::default();
        let at = |a| DType::F32.decode(&interpolate(&base, &ft, a, &opts).unwrap()[0].bytes);
        assert_eq!(at(0.0)[0], 0.0);
        assert!(at(0.0)[1].is_nan());
        assert_eq!(at(1.0), vec![2.0, f32::INFINITY]);
        assert_eq!(at(0.5)[0], 1.0);
    }

    #[test]
    fn interpolation_layout_errors() {
        let base = ckpt(&[("w", Tensor::zeros(vec![2]), DType::F32), ("only_b", Tensor::zeros(vec![1]), DType::F32)]);
        let ft = ckpt(&[("w", Tensor::zeros(vec![2]), DType::F32), ("only_f", Tensor::zeros(vec![1]), DType::F32)]);
        match interpolate(&base, &ft, 0.5, &MergeOptions::default()) {
            Err(MergeError::NameSetMismatch { only_in_base, only_in_other }) => {
                assert_eq!(only_in_base, ["only_b"]);
                assert_eq!(only_in_other, ["only_f"]);
            }
            other => panic!("{other:?}"),
        }
        let ft = ckpt(&[("w", Tensor::zeros(vec![3]), DType::F32), ("only_b", Tensor::zeros(vec![1]), DType::F32)]);
        assert!(matches!(
            interpolate(&base, &ft, 0.5, &MergeOptions::default()),
            Err(MergeError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn alpha_range() {
        let base = ckpt(&[("w", Tensor::zeros(vec![1]), DType::F32)]);
        let opts = MergeOptions::default();
        assert!(matches!(interpolate(&base, &base, 1.5, &opts), Err(MergeError::AlphaOutOfRange(_))));
        assert!(matches!(interpolate(&base, &base, f64::NAN, &opts), Err(MergeError::AlphaOutOfRange(_))));
        let ext = MergeOptions {
            extrapolate: true,
            ..Default::default()
        };
        assert!(interpolate(&base, &base, 1.5, &ext).is_ok());
        assert!(interpolate(&base, &base, -0.5, &ext).is_ok());
    }

    #[test]
    fn single_outer_product() {
        let base = ckpt(&[("w", Tensor::zeros(vec![2, 2]), DType::F32)]);
        let pair = LoraPair::new("w", t(&[1, 2], &[0.0, 1.0]), t(&[2, 1], &[1.0, 0.0]), None).unwrap();
        let adapter = LoraAdapter::new(vec![pair]).unwrap();
        let out = apply_lora(&base, &adapter, 1.0, &MergeOptions::default()).unwrap();
        assert_eq!(DType::F32.decode(&out[0].bytes), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn lora_alpha_zero_is_base_and_untargeted_copied() {
        let base = ckpt(&[
            ("w", t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), DType::BF16),
            ("emb", t(&[3], &[f32::NAN, 1.0, -1.0]), DType::F16),
        ]);
        let pair = LoraPair::new("w", t(&[1, 2], &[1.0, 1.0]), t(&[2, 1], &[1.0, 1.0]), None).unwrap();
        let adapter = LoraAdapter::new(vec![pair]).unwrap();
        let out = apply_lora(&base, &adapter, 0.0, &MergeOptions::default()).unwrap();
        for e in &out {
            assert_eq!(e.bytes, base.read_raw(&e.name).unwrap());
        }
        let out = apply_lora(&base, &adapter, 0.5, &MergeOptions::default()).unwrap();
        let emb = out.iter().find(|e| e.name == "emb").unwrap();
        assert_eq!(emb.bytes, base.read_raw("emb").unwrap());
    }

    #[test]
    fn lora_scale_is_folded_into_delta() {
        let pair = LoraPair::new("w", t(&[1, 1], &[2.0]), t(&[1, 1], &[3.0]), Some(4.0)).unwrap();
        assert_eq!(lora_delta(&pair), vec![24.0]);
    }

    #[test]
    fn unresolved_adapter_target() {
        let base = ckpt(&[("w", Tensor::zeros(vec![2, 2]), DType::F32)]);
        let pair = LoraPair::new("nope", Tensor::zeros(vec![1, 2]), Tensor::zeros(vec![2, 1]), None).unwrap();
        let adapter = LoraAdapter::new(vec![pair]).unwrap();
        assert!(matches!(
            apply_lora(&base, &adapter, 0.5, &MergeOptions::default()),
            Err(MergeError::UnresolvedTarget(_))
        ));
    }

    #[test]
    fn output_dtype_override() {
        let base = ckpt(&[("w", t(&[1], &[1.0]), DType::F32)]);
        let opts = MergeOptions {
            output_dtype: Some(DType::BF16),
            ..Default::default()
        };
        let out = interpolate(&base, &base, 0.0, &opts).unwrap();
        assert_eq!(out[0].dtype, DType::BF16);
        assert_eq!(out[0].bytes, vec![0x80, 0x3F]);
    }

    #[test]
    fn mixed_input_dtypes_meet_in_f32() {
        let base = ckpt(&[("w", t(&[1], &[1.0]), DType::BF16)]);
        let ft = ckpt(&[("w", t(&[1], &[3.0]), DType::F32)]);
        let out = interpolate(&base, &ft, 1.0, &MergeOptions::default()).unwrap();
        assert_eq!(out[0].dtype, DType::BF16);
        assert_eq!(DType::BF16.decode(&out[0].bytes), vec![3.0]);
    }
}
