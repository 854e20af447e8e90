use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Category, LabelSet, Result, ScoreError, ScoredOutput, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Metrics for one (alpha, task kind, dataset) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub alpha: f64,
    pub task_kind: TaskKind,
    #[serde(default)]
    pub dataset: String,
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub category_counts: BTreeMap<Category, usize>,
    pub category_rates: BTreeMap<Category, f64>,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

#[derive(Default)]
struct Tally {
    tp: usize,
    fp: usize,
    support: usize,
}

/// Aggregates judgments into accuracy, category rates and per-class F1.
///
/// Out-of-set outputs and abstentions count as predictions of a synthetic
/// invalid class: they cost the true class recall but add to no real
/// class's false positives. Macro-F1 averages classes with non-zero support.
pub fn aggregate(scored: &[ScoredOutput], labels: &LabelSet, alpha: f64) -> Result<MetricsReport> {
    if scored.is_empty() {
        return Err(ScoreError::Empty);
    }
    let mut ids = HashSet::with_capacity(scored.len());
    for s in scored {
        if !ids.insert(s.sample_id.as_str()) {
            return Err(ScoreError::DuplicateSample(s.sample_id.clone()));
        }
    }

    // Canonical class name: label spelling when the truth is in the set.
    let canonical = |name: &str| -> String {
        labels
            .position(name)
            .map(|i| labels.classes[i].clone())
            .unwrap_or_else(|| name.to_string())
    };

    let mut tallies: BTreeMap<String, Tally> = labels.classes.iter().map(|c| (c.clone(), Tally::default())).collect();
    let mut counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    for s in scored {
        *counts.get_mut(&s.category).expect("all categories present") += 1;
        let truth = canonical(&s.truth);
        let t = tallies.entry(truth).or_default();
        t.support += 1;
        match s.category {
            Category::Correct => t.tp += 1,
            Category::InSetConfusion => {
                let predicted = canonical(s.matched_class.as_deref().expect("confusions carry a class"));
                tallies.entry(predicted).or_default().fp += 1;
            }
            Category::OutOfSet | Category::Abstention => {}
        }
    }

    let n = scored.len();
    let per_class: BTreeMap<String, ClassMetrics> = tallies
        .into_iter()
        .map(|(name, t)| {
            let precision = ratio(t.tp, t.tp + t.fp);
            let recall = ratio(t.tp, t.support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (
                name,
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support: t.support,
                },
            )
        })
        .collect();
    let supported: Vec<f64> = per_class.values().filter(|m| m.support > 0).map(|m| m.f1).collect();
    let macro_f1 = supported.iter().sum::<f64>() / supported.len() as f64;
    let category_rates = counts.iter().map(|(&c, &k)| (c, k as f64 / n as f64)).collect();

    Ok(MetricsReport {
        alpha,
        task_kind: labels.task_kind,
        dataset: String::new(),
        n,
        accuracy: counts[&Category::Correct] as f64 / n as f64,
        macro_f1,
        category_counts: counts,
        category_rates,
        per_class,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
