//! Judging free-form outputs against a label set.
//!
//! Each output is normalized, reduced to candidate answers, and matched to
//! the nearest class by edit distance. A match closer than the threshold
//! `t` counts as a prediction of that class; otherwise the output is out of
//! set. Abstentions are detected before any matching.

mod aggregate;
mod io;
mod judge;
mod text;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{aggregate, ClassMetrics, MetricsReport};
pub use io::{
    read_metrics, read_scoring_rows, score_rows, write_metrics_csv, write_metrics_json, write_scored_jsonl,
    ScoredRow, ScoringRow,
};
pub use judge::{judge, AbstentionPatterns, JudgeConfig, DEFAULT_THRESHOLD};
pub use text::{extract_answer, levenshtein, normalize};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("label {0:?} appears twice after normalization")]
    DuplicateLabel(String),
    #[error("ground truth {0:?} is not in the label set")]
    TruthNotInLabelSet(String),
    #[error("sample {0:?} appears more than once")]
    DuplicateSample(String),
    #[error("nothing to aggregate")]
    Empty,
    #[error("threshold must be at least 1")]
    InvalidThreshold,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ScoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Common,
    Scientific,
    Combined,
    #[serde(alias = "closed-set")]
    ClosedSet,
    #[serde(alias = "binary-choice")]
    BinaryChoice,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Common,
        TaskKind::Scientific,
        TaskKind::Combined,
        TaskKind::ClosedSet,
        TaskKind::BinaryChoice,
    ];

    /// Kinds whose ground truth must be one of the enumerated classes.
    pub fn is_closed(self) -> bool {
        matches!(self, TaskKind::ClosedSet | TaskKind::BinaryChoice)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Common => "common",
            TaskKind::Scientific => "scientific",
            TaskKind::Combined => "combined",
            TaskKind::ClosedSet => "closed_set",
            TaskKind::BinaryChoice => "binary_choice",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.replace('-', "_");
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown task kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Correct,
    InSetConfusion,
    OutOfSet,
    Abstention,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Correct,
        Category::InSetConfusion,
        Category::OutOfSet,
        Category::Abstention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Correct => "correct",
            Category::InSetConfusion => "in_set_confusion",
            Category::OutOfSet => "out_of_set",
            Category::Abstention => "abstention",
        }
    }
}

/// `{scientific}: {common}`, the target string of the combined prompt.
pub fn combined_target(scientific: &str, common: &str) -> String {
    format!("{scientific}: {common}")
}

/// Ordered classes a prediction may name. Order breaks distance ties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub classes: Vec<String>,
    pub task_kind: TaskKind,
}

impl LabelSet {
    pub fn new(classes: Vec<String>, task_kind: TaskKind) -> Result<Self> {
        if classes.is_empty() {
            return Err(ScoreError::EmptyLabelSet);
        }
        let mut seen = std::collections::HashSet::new();
        for c in &classes {
            if !seen.insert(normalize(c)) {
                return Err(ScoreError::DuplicateLabel(c.clone()));
            }
        }
        Ok(LabelSet { classes, task_kind })
    }

    /// Index of the class equal to `name` after normalization.
    pub fn position(&self, name: &str) -> Option<usize> {
        let n = normalize(name);
        self.classes.iter().position(|c| normalize(c) == n)
    }
}

/// Verdict for one output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredOutput {
    pub sample_id: String,
    pub truth: String,
    /// Nearest class; absent for abstentions.
    pub matched_class: Option<String>,
    pub distance: Option<usize>,
    pub category: Category,
    /// Another class was equally near; the earlier one in label order won.
    #[serde(default)]
    pub tie: bool,
    /// The extracted candidate that produced the match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_targets() {
        assert_eq!(combined_target("Odobenus rosmarus", "Walrus"), "Odobenus rosmarus: Walrus");
        assert_eq!(combined_target("Stenella clymene", "Clymene Dolphin"), "Stenella clymene: Clymene Dolphin");
        assert_eq!(combined_target("a", "b"), "a: b");
    }

    #[test]
    fn label_set_rules() {
        assert!(matches!(LabelSet::new(vec![], TaskKind::Common), Err(ScoreError::EmptyLabelSet)));
        assert!(matches!(
            LabelSet::new(vec!["Walrus".into(), " Walrus.".into()], TaskKind::Common),
            Err(ScoreError::DuplicateLabel(_))
        ));
        let l = LabelSet::new(vec!["A".into(), "B".into()], TaskKind::ClosedSet).unwrap();
        assert_eq!(l.position("'B'"), Some(1));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("closed-set".parse::<TaskKind>().unwrap(), TaskKind::ClosedSet);
        assert_eq!("combined".parse::<TaskKind>().unwrap(), TaskKind::Combined);
        assert!("other".parse::<TaskKind>().is_err());
        let k: TaskKind = serde_json::from_str("\"closed-set\"").unwrap();
        assert_eq!(k, TaskKind::ClosedSet);
    }
}
