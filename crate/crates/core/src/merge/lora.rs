use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Deserialize;

use super::{MergeError, Result};
use crate::tensorstore::{Checkpoint, CheckpointIndex, Tensor};

/// One low-rank update `s * (B @ A)` with `A: rank x d_in`, `B: d_out x rank`.
///
/// The update is written `AB` in some texts; the stored orientation here
/// follows adapter files on disk, where `lora_A` projects the input down.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub target: String,
    pub a: Tensor,
    pub b: Tensor,
    pub rank: usize,
    pub scale_numerator: f64,
}

impl LoraPair {
    /// `scale_numerator` defaults to the rank, giving a unit scale.
    pub fn new(target: impl Into<String>, a: Tensor, b: Tensor, scale_numerator: Option<f64>) -> Result<Self> {
        let target = target.into();
        if a.shape.len() != 2 || b.shape.len() != 2 {
            return Err(MergeError::RankMismatch(format!(
                "{target}: lora_A {:?} and lora_B {:?} must both be matrices",
                a.shape, b.shape
            )));
        }
        let rank = a.shape[0];
        if rank == 0 || b.shape[1] != rank {
            return Err(MergeError::RankMismatch(format!(
                "{target}: lora_A is {:?} but lora_B is {:?}",
                a.shape, b.shape
            )));
        }
        Ok(LoraPair {
            target,
            a,
            b,
            rank,
            scale_numerator: scale_numerator.unwrap_or(rank as f64),
        })
    }

    pub fn d_in(&self) -> usize {
        self.a.shape[1]
    }

    pub fn d_out(&self) -> usize {
        self.b.shape[0]
    }

    pub fn scale(&self) -> f64 {
        self.scale_numerator / self.rank as f64
    }

    pub fn check_target_shape(&self, shape: &[usize]) -> Result<()> {
        if shape != [self.d_out(), self.d_in()] {
            return Err(MergeError::RankMismatch(format!(
                "{}: base weight is {shape:?} but the update is [{}, {}]",
                self.target,
                self.d_out(),
                self.d_in()
            )));
        }
        Ok(())
    }
}

/// Prefix-strip rules mapping adapter module paths onto base tensor names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameRule {
    pub strip_prefixes: Vec<String>,
}

impl Default for NameRule {
    fn default() -> Self {
        NameRule {
            strip_prefixes: vec!["base_model.model.".to_string()],
        }
    }
}

impl NameRule {
    pub fn none() -> Self {
        NameRule {
            strip_prefixes: Vec::new(),
        }
    }

    /// Candidate base names for a module path, most specific rule first.
    fn candidates(&self, module_path: &str) -> Vec<String> {
        let mut out: Vec<String> = self
            .strip_prefixes
            .iter()
            .filter_map(|p| module_path.strip_prefix(p.as_str()))
            .map(|m| format!("{m}.weight"))
            .collect();
        out.push(format!("{module_path}.weight"));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBinding {
    pub module_path: String,
    pub a_name: String,
    pub b_name: String,
    pub target: String,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Half {
    A,
    B,
}

/// Splits `{module}.lora_A.weight` or `{module}.lora_A.{adapter}.weight`.
fn split_lora_name(name: &str) -> Option<(&str, Half)> {
    let stem = name.strip_suffix(".weight")?;
    for (marker, half) in [(".lora_A", Half::A), (".lora_B", Half::B)] {
        if let Some(module) = stem.strip_suffix(marker) {
            return Some((module, half));
        }
        if let Some(pos) = stem.rfind(&format!("{marker}.")) {
            let adapter = &stem[pos + marker.len() + 1..];
            if !adapter.is_empty() && !adapter.contains('.') {
                return Some((&stem[..pos], half));
            }
        }
    }
    None
}

/// Groups adapter tensor names into A/B pairs and binds each pair to a base
/// tensor. Names that are not LoRA halves are skipped with a warning.
pub fn match_names<'a>(
    base: &CheckpointIndex,
    adapter_names: impl IntoIterator<Item = &'a str>,
    rule: &NameRule,
) -> Result<Vec<PairBinding>> {
    let mut halves: BTreeMap<&str, (Option<&str>, Option<&str>)> = BTreeMap::new();
    for name in adapter_names {
        match split_lora_name(name) {
            Some((module, half)) => {
                let slot = halves.entry(module).or_default();
                let dst = if half == Half::A { &mut slot.0 } else { &mut slot.1 };
                if dst.replace(name).is_some() {
                    return Err(MergeError::DuplicateTarget(module.to_string()));
                }
            }
            None => tracing::warn!(tensor = name, "adapter tensor is not a LoRA half; ignored"),
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(halves.len());
    for (module, pair) in halves {
        let (Some(a), Some(b)) = pair else {
            return Err(MergeError::OrphanHalf(module.to_string()));
        };
        let target = rule
            .candidates(module)
            .into_iter()
            .find(|c| base.contains(c))
            .ok_or_else(|| MergeError::UnresolvedTarget(module.to_string()))?;
        if !seen.insert(target.clone()) {
            return Err(MergeError::DuplicateTarget(target));
        }
        out.push(PairBinding {
            module_path: module.to_string(),
            a_name: a.to_string(),
            b_name: b.to_string(),
            target,
        });
    }
    Ok(out)
}

/// The subset of a PEFT `adapter_config.json` that affects merging.
#[derive(Debug, Clone, Deserialize)]
pub struct AdapterConfig {
    pub r: Option<usize>,
    pub lora_alpha: Option<f64>,
}

impl AdapterConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MergeError::InvalidSpec(format!("adapter config: {e}")))
    }
}

/// A set of LoRA pairs with distinct targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoraAdapter {
    pub pairs: Vec<LoraPair>,
    pub name_rule: Option<NameRule>,
}

impl LoraAdapter {
    pub fn new(pairs: Vec<LoraPair>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &pairs {
            if !seen.insert(p.target.as_str()) {
                return Err(MergeError::DuplicateTarget(p.target.clone()));
            }
        }
        Ok(LoraAdapter {
            pairs,
            name_rule: None,
        })
    }

    /// Reads every pair from an adapter checkpoint and binds it to `base`.
    pub fn load(
        adapter: &Checkpoint,
        base: &CheckpointIndex,
        rule: &NameRule,
        scale_numerator: Option<f64>,
    ) -> Result<Self> {
        let bindings = match_names(base, adapter.index.names(), rule)?;
        let mut pairs = Vec::with_capacity(bindings.len());
        for bind in bindings {
            let pair = LoraPair::new(
                bind.target.clone(),
                adapter.read_tensor(&bind.a_name)?,
                adapter.read_tensor(&bind.b_name)?,
                scale_numerator,
            )?;
            pair.check_target_shape(&base.get(&bind.target)?.shape)?;
            pairs.push(pair);
        }
        let mut out = LoraAdapter::new(pairs)?;
        out.name_rule = Some(rule.clone());
        Ok(out)
    }

    pub fn pair_for(&self, target: &str) -> Option<&LoraPair> {
        self.pairs.iter().find(|p| p.target == target)
    }

    /// Checks that every target exists in `base` with a compatible shape.
    pub fn check_against(&self, base: &CheckpointIndex) -> Result<()> {
        for p in &self.pairs {
            let entry = base
                .entries
                .get(&p.target)
                .ok_or_else(|| MergeError::UnresolvedTarget(p.target.clone()))?;
            p.check_target_shape(&entry.shape)?;
        }
        Ok(())
    }
}
