use rayon::prelude::*;
use serde::Serialize;

use super::ops::{apply_delta, interpolate_values, lora_delta};
use super::{LoraAdapter, MergeOptions, Result};
use crate::tensorstore::Checkpoint;

/// Deviation between the two merge routes at one alpha.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceRow {
    pub alpha: f64,
    pub max_abs: f64,
    pub rms: f64,
    /// Tensor holding the largest deviation; `None` when every deviation is 0.
    pub worst_tensor: Option<String>,
    pub tensors: usize,
    pub elements: usize,
    /// Element pairs skipped because either route produced NaN or Inf.
    pub non_finite: usize,
}

struct TensorDeviation {
    name: String,
    max_abs: f64,
    sum_sq: f64,
    elements: usize,
    non_finite: usize,
}

/// Compares `interpolate(base, ft, alpha)` against `apply_lora(base, adapter,
/// alpha)` for every patched tensor, where `ft = apply_lora(base, adapter, 1)`
/// is materialized in f32. Both routes are evaluated in working precision,
/// before any output quantization.
pub fn equivalence_report(
    base: &Checkpoint,
    adapter: &LoraAdapter,
    alphas: &[f64],
    opts: &MergeOptions,
) -> Result<Vec<EquivalenceRow>> {
    for &a in alphas {
        opts.check_alpha(a)?;
    }
    adapter.check_against(&base.index)?;

    let per_tensor: Vec<Vec<TensorDeviation>> = opts.pool()?.install(|| {
        adapter
            .pairs
            .par_iter()
            .map(|pair| {
                let w = base.read_tensor(&pair.target)?;
                let delta = lora_delta(pair);
                let ft = apply_delta(&w.values, &delta, 1.0);
                Ok(alphas
                    .iter()
                    .map(|&alpha| {
                        let via_interp = interpolate_values(&w.values, &ft, alpha);
                        let via_lora = apply_delta(&w.values, &delta, alpha);
                        deviation(&pair.target, &via_interp, &via_lora)
                    })
                    .collect())
            })
            .collect::<Result<_>>()
    })?;

    Ok(alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let mut row = EquivalenceRow {
                alpha,
                max_abs: 0.0,
                rms: 0.0,
                worst_tensor: None,
                tensors: per_tensor.len(),
                elements: 0,
                non_finite: 0,
            };
            let mut sum_sq = 0.0;
            for dev in per_tensor.iter().map(|t| &t[i]) {
                if dev.max_abs > row.max_abs {
                    row.max_abs = dev.max_abs;
                    row.worst_tensor = Some(dev.name.clone());
                }
                sum_sq += dev.sum_sq;
                row.elements += dev.elements;
                row.non_finite += dev.non_finite;
            }
            if row.elements > 0 {
                row.rms = (sum_sq / row.elements as f64).sqrt();
            }
            row
        })
        .collect())
}

fn deviation(name: &str, a: &[f32], b: &[f32]) -> TensorDeviation {
    let mut dev = TensorDeviation {
        name: name.to_string(),
        max_abs: 0.0,
        sum_sq: 0.0,
        elements: 0,
        non_finite: 0,
    };
    for (&x, &y) in a.iter().zip(b) {
        if !x.is_finite() || !y.is_finite() {
            dev.non_finite += 1;
            continue;
        }
        let d = (x as f64 - y as f64).abs();
        dev.max_abs = dev.max_abs.max(d);
        dev.sum_sq += d * d;
        dev.elements += 1;
    }
    dev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::LoraPair;
    use crate::tensorstore::{write_checkpoint, DType, EncodedTensor, Tensor};

    #[test]
    fn endpoints_are_exact() {
        let w = Tensor::new(vec![2, 3], vec![0.1, -0.7, 3.3, 1e-3, 2.5, -9.0]).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&[EncodedTensor::encode("w", &w, DType::F32).unwrap()], &Default::default(), &mut bytes)
            .unwrap();
        let base = Checkpoint::from_bytes(bytes).unwrap();
        let a = Tensor::new(vec![1, 3], vec![0.3, 0.2, -0.1]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.7, -0.4]).unwrap();
        let adapter = LoraAdapter::new(vec![LoraPair::new("w", a, b, Some(2.0)).unwrap()]).unwrap();
        let rows = equivalence_report(&base, &adapter, &[0.0, 0.5, 1.0], &MergeOptions::default()).unwrap();
        assert_eq!(rows[0].max_abs, 0.0);
        assert_eq!(rows[2].max_abs, 0.0);
        assert!(rows[1].max_abs <= 1e-5);
        assert_eq!(rows[0].worst_tensor, None);
        assert_eq!(rows[1].elements, 6);
    }
}
