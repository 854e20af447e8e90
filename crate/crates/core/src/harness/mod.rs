//! Drives a chat endpoint over a manifest and persists raw runs.

mod client;
mod run;

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{EvalSample, PromptError, SplitMix64, TemplateKind};
use crate::scoring::{combined_target, LabelSet, ScoringRow, TaskKind};
pub use client::{ChatClient, Completion, EndpointConfig, EndpointError, RetryPolicy, DEFAULT_PATH, SAMPLE_ID_HEADER};
pub use run::{run, RunSpec, RunSummary, SampleFailure};

/// How per-sample permutation seeds are derived; recorded with every run.
pub const SEED_DERIVATION: &str =
    "fnv1a64(master_seed as 8 little-endian bytes || sample_id as UTF-8); splitmix64-driven Fisher-Yates";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("sample id {0:?} appears more than once in the manifest")]
    DuplicateSample(String),
    #[error("run record references unknown sample {0:?}")]
    UnknownSampleId(String),
    #[error("sample {sample_id:?} has no {field} for {kind} scoring")]
    MissingGroundTruth {
        sample_id: String,
        field: &'static str,
        kind: TaskKind,
    },
    #[error("endpoint client: {0}")]
    Client(#[from] reqwest::Error),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// One endpoint response. `(sample_id, alpha, kind)` is unique per run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_id: String,
    pub alpha: f64,
    pub kind: TemplateKind,
    pub prompt_text: String,
    pub permutation_seed: u64,
    pub response_text: String,
    pub endpoint: String,
    pub model: String,
    pub attempts: u32,
    pub timestamp_ms: u64,
    pub latency_ms: u64,
}

/// Resume key of a record.
pub type RecordKey = (String, u64, TemplateKind);

impl RunRecord {
    pub fn key(&self) -> RecordKey {
        (self.sample_id.clone(), self.alpha.to_bits(), self.kind)
    }

    /// Copy with the timing fields zeroed, for content comparisons.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            timestamp_ms: 0,
            latency_ms: 0,
            ..self.clone()
        }
    }
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads a line-delimited JSON manifest, rejecting duplicate ids.
pub fn load_manifest(path: &Path) -> Result<Vec<EvalSample>> {
    let samples: Vec<EvalSample> = read_lines(path)?;
    check_manifest(&samples)?;
    Ok(samples)
}

pub fn check_manifest(samples: &[EvalSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyManifest);
    }
    let mut seen = HashSet::new();
    for s in samples {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(HarnessError::DuplicateSample(s.sample_id.clone()));
        }
    }
    Ok(())
}

pub fn read_run_file(path: &Path) -> Result<Vec<RunRecord>> {
    read_lines(path)
}

/// Canonical class order: distinct common names in first-seen manifest order.
pub fn manifest_classes(samples: &[EvalSample]) -> Vec<String> {
    let mut seen = HashSet::new();
    samples
        .iter()
        .filter_map(|s| s.common_name.as_ref())
        .filter(|c| seen.insert(c.as_str()))
        .cloned()
        .collect()
}

/// Seeded reordering of a label set's classes.
pub fn shuffle_labels(labels: &LabelSet, seed: u64) -> LabelSet {
    let mut classes = labels.classes.clone();
    let mut rng = SplitMix64::new(seed);
    for i in (1..classes.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        classes.swap(i, j);
    }
    LabelSet {
        classes,
        task_kind: labels.task_kind,
    }
}

/// Ground truth of a sample for the given task.
///
/// Binary-choice tasks read `extra_labels["label"]`; closed-set tasks use
/// the common name, falling back to that same extra label.
pub fn ground_truth(sample: &EvalSample, kind: TaskKind) -> Result<String> {
    let missing = |field| HarnessError::MissingGroundTruth {
        sample_id: sample.sample_id.clone(),
        field,
        kind,
    };
    let common = sample.common_name.as_deref();
    let scientific = sample.scientific_name.as_deref();
    let extra = sample.extra_labels.get("label").map(String::as_str);
    Ok(match kind {
        TaskKind::Common => common.ok_or_else(|| missing("common_name"))?.to_string(),
        TaskKind::Scientific => scientific.ok_or_else(|| missing("scientific_name"))?.to_string(),
        TaskKind::Combined => combined_target(
            scientific.ok_or_else(|| missing("scientific_name"))?,
            common.ok_or_else(|| missing("common_name"))?,
        ),
        TaskKind::ClosedSet => common.or(extra).ok_or_else(|| missing("common_name"))?.to_string(),
        TaskKind::BinaryChoice => extra.ok_or_else(|| missing("extra_labels.label"))?.to_string(),
    })
}

/// Joins run records to the manifest's ground truth.
///
/// `task_kind` overrides the kind implied by each record's template.
pub fn export_for_scoring(
    records: &[RunRecord],
    manifest: &[EvalSample],
    task_kind: Option<TaskKind>,
) -> Result<Vec<ScoringRow>> {
    let by_id: HashMap<&str, &EvalSample> = manifest.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    records
        .iter()
        .map(|r| {
            let sample = by_id
                .get(r.sample_id.as_str())
                .ok_or_else(|| HarnessError::UnknownSampleId(r.sample_id.clone()))?;
            let kind = task_kind.unwrap_or_else(|| r.kind.task_kind());
            Ok(ScoringRow {
                sample_id: r.sample_id.clone(),
                output_text: r.response_text.clone(),
                truth: ground_truth(sample, kind)?,
                alpha: r.alpha,
                task_kind: kind,
                dataset: sample.dataset.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walrus() -> EvalSample {
        EvalSample {
            sample_id: "w1".into(),
            dataset: "watkins".into(),
            common_name: Some("Walrus".into()),
            scientific_name: Some("Odobenus rosmarus".into()),
            audio_ref: "w1.wav".into(),
            extra_labels: Default::default(),
        }
    }

    fn record(id: &str, kind: TemplateKind) -> RunRecord {
        RunRecord {
            sample_id: id.into(),
            alpha: 0.5,
            kind,
            prompt_text: String::new(),
            permutation_seed: 0,
            response_text: "Walrus".into(),
            endpoint: String::new(),
            model: String::new(),
            attempts: 1,
            timestamp_ms: 0,
            latency_ms: 0,
        }
    }

    #[test]
    fn truth_per_task() {
        let m = [walrus()];
        let rows = export_for_scoring(&[record("w1", TemplateKind::Common)], &m, None).unwrap();
        assert_eq!(rows[0].truth, "Walrus");
        assert_eq!(rows[0].dataset, "watkins");
        let rows = export_for_scoring(&[record("w1", TemplateKind::Combined)], &m, None).unwrap();
        assert_eq!(rows[0].truth, "Odobenus rosmarus: Walrus");
        assert_eq!(rows[0].task_kind, TaskKind::Combined);
        let err = export_for_scoring(&[record("w2", TemplateKind::Common)], &m, None);
        assert!(matches!(err, Err(HarnessError::UnknownSampleId(id)) if id == "w2"));
        let err = export_for_scoring(&[record("w1", TemplateKind::ZfOriginal)], &m, None);
        assert!(matches!(err, Err(HarnessError::MissingGroundTruth { .. })));
    }

    #[test]
    fn manifest_checks() {
        assert!(matches!(check_manifest(&[]), Err(HarnessError::EmptyManifest)));
        assert!(matches!(check_manifest(&[walrus(), walrus()]), Err(HarnessError::DuplicateSample(_))));
    }

    #[test]
    fn label_shuffle_is_seeded_permutation() {
        let labels = LabelSet::new((0..6).map(|i| format!("c{i}")).collect(), TaskKind::ClosedSet).unwrap();
        let a = shuffle_labels(&labels, 9);
        assert_eq!(a, shuffle_labels(&labels, 9));
        let mut sorted = a.classes.clone();
        sorted.sort();
        assert_eq!(sorted, labels.classes);
    }
}
