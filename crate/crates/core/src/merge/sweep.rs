use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ops::{apply_lora, interpolate, write_merged};
use super::{LoraAdapter, MergeError, MergeMode, MergeOptions, Result};
use crate::tensorstore::{Checkpoint, DType};

pub const ALPHA_PLACEHOLDER: &str = "{alpha}";
pub const SWEEP_MANIFEST: &str = "sweep_manifest.jsonl";

/// Shortest round-trip decimal form, e.g. `0`, `0.5`, `1`.
pub fn format_alpha(alpha: f64) -> String {
    format!("{alpha}")
}

/// Declarative plan for a sweep over merging coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSpec {
    pub mode: MergeMode,
    pub alphas: Vec<f64>,
    /// `None` keeps each base tensor's dtype.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dtype: Option<DType>,
    /// File name pattern containing `{alpha}`.
    pub output_naming: String,
}

impl MergeSpec {
    pub fn validate(&self, extrapolate: bool) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(MergeError::InvalidSpec("alphas must not be empty".into()));
        }
        let opts = MergeOptions {
            extrapolate,
            ..Default::default()
        };
        for &a in &self.alphas {
            opts.check_alpha(a)?;
        }
        if let Some(w) = self.alphas.windows(2).find(|w| w[0] >= w[1]) {
            return Err(MergeError::InvalidSpec(format!(
                "alphas must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if !self.output_naming.contains(ALPHA_PLACEHOLDER) {
            return Err(MergeError::InvalidSpec(format!(
                "output naming {:?} lacks the {ALPHA_PLACEHOLDER} placeholder",
                self.output_naming
            )));
        }
        if self.output_naming.contains('/') || self.output_naming.contains('\\') {
            return Err(MergeError::InvalidSpec("output naming must be a bare file name".into()));
        }
        Ok(())
    }

    pub fn file_name(&self, alpha: f64) -> String {
        self.output_naming.replace(ALPHA_PLACEHOLDER, &format_alpha(alpha))
    }
}

/// The second model of a merge.
#[derive(Debug, Clone, Copy)]
pub enum MergeInput<'a> {
    FineTuned(&'a Checkpoint),
    Adapter(&'a LoraAdapter),
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub merge: MergeOptions,
    pub overwrite: bool,
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub alpha: f64,
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub mode: MergeMode,
}

/// The fully fine-tuned model implied by an adapter, `apply_lora(base,
/// adapter, 1)`, held in memory in F32.
pub fn materialize(base: &Checkpoint, adapter: &LoraAdapter, opts: &MergeOptions) -> Result<Checkpoint> {
    let exact = MergeOptions {
        output_dtype: Some(DType::F32),
        ..opts.clone()
    };
    let tensors = apply_lora(base, adapter, 1.0, &exact)?;
    let mut bytes = Vec::new();
    crate::tensorstore::write_checkpoint(&tensors, &Default::default(), &mut bytes)?;
    Ok(Checkpoint::from_bytes(bytes)?)
}

/// Writes one merged checkpoint per alpha into `out_dir` plus
/// [`SWEEP_MANIFEST`]. In interpolation mode an adapter input is first
/// materialized as `apply_lora(base, adapter, 1)` in memory.
pub fn sweep(
    base: &Checkpoint,
    input: MergeInput<'_>,
    spec: &MergeSpec,
    out_dir: &Path,
    opts: &SweepOptions,
) -> Result<Vec<SweepEntry>> {
    spec.validate(opts.merge.extrapolate)?;
    std::fs::create_dir_all(out_dir)?;
    let manifest_path = out_dir.join(SWEEP_MANIFEST);
    let targets: Vec<PathBuf> = spec.alphas.iter().map(|&a| out_dir.join(spec.file_name(a))).collect();
    if !opts.overwrite {
        if let Some(p) = targets.iter().chain([&manifest_path]).find(|p| p.exists()) {
            return Err(MergeError::OutputExists(p.clone()));
        }
    }

    let merge_opts = MergeOptions {
        output_dtype: spec.output_dtype,
        ..opts.merge.clone()
    };

    let materialized;
    let ft = match (spec.mode, input) {
        (MergeMode::Interpolate, MergeInput::FineTuned(ft)) => Some(ft),
        (MergeMode::Interpolate, MergeInput::Adapter(adapter)) => {
            materialized = materialize(base, adapter, &merge_opts)?;
            Some(&materialized)
        }
        (MergeMode::LoraRescale, MergeInput::Adapter(_)) => None,
        (MergeMode::LoraRescale, MergeInput::FineTuned(_)) => {
            return Err(MergeError::ModeMismatch(
                "lora mode needs an adapter, not a fine-tuned checkpoint".into(),
            ))
        }
    };

    let mut entries = Vec::with_capacity(spec.alphas.len());
    for (&alpha, path) in spec.alphas.iter().zip(&targets) {
        let tensors = match (ft, input) {
            (Some(ft), _) => interpolate(base, ft, alpha, &merge_opts)?,
            (None, MergeInput::Adapter(adapter)) => apply_lora(base, adapter, alpha, &merge_opts)?,
            (None, MergeInput::FineTuned(_)) => unreachable!("rejected above"),
        };
        let mut metadata: BTreeMap<String, String> = base.index.metadata.clone();
        metadata.insert("merge.alpha".into(), format_alpha(alpha));
        metadata.insert("merge.mode".into(), spec.mode.as_str().into());
        let sha256 = write_merged(path, &tensors, &metadata)?;
        tracing::info!(alpha, path = %path.display(), %sha256, "wrote merged checkpoint");
        entries.push(SweepEntry {
            alpha,
            path: spec.file_name(alpha),
            sha256,
            mode: spec.mode,
        });
    }

    let mut manifest = Vec::new();
    for e in &entries {
        serde_json::to_writer(&mut manifest, e).map_err(std::io::Error::other)?;
        manifest.write_all(b"\n")?;
    }
    std::fs::write(&manifest_path, manifest)?;
    Ok(entries)
}

pub fn read_sweep_manifest(path: &Path) -> Result<Vec<SweepEntry>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            MergeError::InvalidSpec(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(alphas: &[f64]) -> MergeSpec {
        MergeSpec {
            mode: MergeMode::Interpolate,
            alphas: alphas.to_vec(),
            output_dtype: None,
            output_naming: "merged-a{alpha}.safetensors".into(),
        }
    }

    #[test]
    fn spec_validation() {
        assert!(spec(&[0.0, 0.5, 1.0]).validate(false).is_ok());
        assert!(spec(&[0.4, 0.6]).validate(false).is_ok());
        assert!(spec(&[]).validate(false).is_err());
        assert!(spec(&[0.5, 0.5]).validate(false).is_err());
        assert!(spec(&[0.6, 0.4]).validate(false).is_err());
        assert!(matches!(spec(&[1.2]).validate(false), Err(MergeError::AlphaOutOfRange(_))));
        assert!(spec(&[1.2]).validate(true).is_ok());
        let mut s = spec(&[0.5]);
        s.output_naming = "merged.safetensors".into();
        assert!(s.validate(false).is_err());
    }

    #[test]
    fn file_names() {
        let s = spec(&[0.0]);
        assert_eq!(s.file_name(0.0), "merged-a0.safetensors");
        assert_eq!(s.file_name(0.25), "merged-a0.25.safetensors");
        assert_eq!(s.file_name(1.0), "merged-a1.safetensors");
    }
}
