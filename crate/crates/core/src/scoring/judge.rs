use serde::{Deserialize, Serialize};

use super::text::{extract_answer, levenshtein, normalize};
use super::{Category, LabelSet, Result, ScoreError, ScoredOutput};

pub const DEFAULT_THRESHOLD: usize = 5;

/// Refusal markers checked before distance matching. An empty pattern
/// matches an empty output; others match case-insensitive substrings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AbstentionPatterns(pub Vec<String>);

impl Default for AbstentionPatterns {
    fn default() -> Self {
        AbstentionPatterns(
            ["", "I don't know", "cannot", "unable to"]
                .into_iter()
                .map(String::from)
                .collect(),
        )
    }
}

impl AbstentionPatterns {
    pub fn matches(&self, normalized: &str) -> bool {
        let hay = fold(normalized);
        self.0.iter().any(|p| {
            if p.is_empty() {
                normalized.is_empty()
            } else {
                hay.contains(&fold(p))
            }
        })
    }
}

fn fold(s: &str) -> String {
    s.to_lowercase().replace('\u{2019}', "'")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeConfig {
    /// A match counts only when its distance is strictly below this.
    pub threshold: usize,
    pub abstention: AbstentionPatterns,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            threshold: DEFAULT_THRESHOLD,
            abstention: AbstentionPatterns::default(),
        }
    }
}

/// Judges one output.
///
/// For open naming tasks a truth missing from `labels` is appended as an
/// extra class so it can still be matched; closed-set kinds reject it.
pub fn judge(sample_id: &str, output: &str, truth: &str, labels: &LabelSet, cfg: &JudgeConfig) -> Result<ScoredOutput> {
    if cfg.threshold == 0 {
        return Err(ScoreError::InvalidThreshold);
    }
    let truth_idx = match labels.position(truth) {
        Some(i) => i,
        None if labels.task_kind.is_closed() => return Err(ScoreError::TruthNotInLabelSet(truth.to_string())),
        None => labels.classes.len(),
    };
    let truth_norm = normalize(truth);
    let class_norm: Vec<String> = labels
        .classes
        .iter()
        .map(|c| normalize(c))
        .chain((truth_idx == labels.classes.len()).then(|| truth_norm.clone()))
        .collect();

    let mut scored = ScoredOutput {
        sample_id: sample_id.to_string(),
        truth: truth.to_string(),
        matched_class: None,
        distance: None,
        category: Category::Abstention,
        tie: false,
        candidate: None,
    };

    let norm = normalize(output);
    if cfg.abstention.matches(&norm) {
        return Ok(scored);
    }

    // Nearest (distance, class index, candidate index), lexicographically.
    let candidates = extract_answer(output, labels.task_kind);
    let mut best: Option<(usize, usize, usize)> = None;
    let mut class_best = vec![usize::MAX; class_norm.len()];
    for (ci, cand) in candidates.iter().enumerate() {
        for (k, class) in class_norm.iter().enumerate() {
            let d = levenshtein(cand, class);
            class_best[k] = class_best[k].min(d);
            if best.is_none_or(|b| (d, k, ci) < b) {
                best = Some((d, k, ci));
            }
        }
    }
    let (distance, class_idx, cand_idx) = best.expect("at least one class and one candidate");

    scored.tie = class_best
        .iter()
        .enumerate()
        .any(|(k, &d)| k != class_idx && d == distance);
    scored.matched_class = Some(if class_idx < labels.classes.len() {
        labels.classes[class_idx].clone()
    } else {
        truth.to_string()
    });
    scored.distance = Some(distance);
    scored.candidate = Some(candidates[cand_idx].clone());
    scored.category = if distance >= cfg.threshold {
        Category::OutOfSet
    } else if class_idx == truth_idx {
        Category::Correct
    } else {
        Category::InSetConfusion
    };
    Ok(scored)
}
