use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{aggregate, judge, Category, JudgeConfig, LabelSet, MetricsReport, Result, ScoreError, ScoredOutput, TaskKind};
use crate::report::format_number;

/// One line of the scoring input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRow {
    pub sample_id: String,
    pub output_text: String,
    pub truth: String,
    pub alpha: f64,
    pub task_kind: TaskKind,
    #[serde(default)]
    pub dataset: String,
}

/// A judgment tagged with its group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub alpha: f64,
    pub task_kind: TaskKind,
    pub dataset: String,
    #[serde(flatten)]
    pub scored: ScoredOutput,
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ScoreError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_scoring_rows(path: &Path) -> Result<Vec<ScoringRow>> {
    read_jsonl(path)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ScoreError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

type GroupKey = (u64, TaskKind, String);

fn group_key(alpha: f64, kind: TaskKind, dataset: &str) -> GroupKey {
    (alpha.to_bits(), kind, dataset.to_string())
}

/// Judges every row and aggregates per (alpha, task kind, dataset).
///
/// With `labels` unset, each group's label set is its distinct ground
/// truths in sorted order, which keeps the result independent of row order.
/// Reports come back sorted by alpha, then kind, then dataset.
pub fn score_rows(
    rows: &[ScoringRow],
    labels: Option<&[String]>,
    cfg: &JudgeConfig,
) -> Result<(Vec<ScoredRow>, Vec<MetricsReport>)> {
    let mut groups: BTreeMap<GroupKey, Vec<&ScoringRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(group_key(r.alpha, r.task_kind, &r.dataset)).or_default().push(r);
    }

    let mut keys: Vec<_> = groups.keys().cloned().collect();
    keys.sort_by(|a, b| {
        f64::from_bits(a.0)
            .total_cmp(&f64::from_bits(b.0))
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut all_scored = Vec::with_capacity(rows.len());
    let mut reports = Vec::with_capacity(keys.len());
    for key in keys {
        let mut members = groups.remove(&key).expect("key from map");
        members.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let (alpha, kind, dataset) = (f64::from_bits(key.0), key.1, key.2);
        let classes = match labels {
            Some(l) => l.to_vec(),
            None => {
                let mut t: Vec<String> = members.iter().map(|r| r.truth.clone()).collect();
                t.sort();
                t.dedup();
                t
            }
        };
        let label_set = LabelSet::new(classes, kind)?;
        let scored = members
            .iter()
            .map(|r| judge(&r.sample_id, &r.output_text, &r.truth, &label_set, cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut report = aggregate(&scored, &label_set, alpha)?;
        report.dataset = dataset.clone();
        reports.push(report);
        all_scored.extend(scored.into_iter().map(|s| ScoredRow {
            alpha,
            task_kind: kind,
            dataset: dataset.clone(),
            scored: s,
        }));
    }
    Ok((all_scored, reports))
}

pub fn write_scored_jsonl<W: Write>(rows: &[ScoredRow], mut sink: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut sink, r).map_err(std::io::Error::other)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_metrics_json<W: Write>(reports: &[MetricsReport], mut sink: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, reports).map_err(std::io::Error::other)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// One row per report per category.
pub fn write_metrics_csv<W: Write>(reports: &[MetricsReport], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["alpha", "task_kind", "dataset", "category", "count", "rate", "n", "accuracy", "macro_f1"])
        .map_err(csv_err)?;
    for r in reports {
        for c in Category::ALL {
            w.write_record([
                format_number(r.alpha),
                r.task_kind.to_string(),
                r.dataset.clone(),
                c.as_str().to_string(),
                r.category_counts.get(&c).copied().unwrap_or(0).to_string(),
                format_number(r.category_rates.get(&c).copied().unwrap_or(0.0)),
                r.n.to_string(),
                format_number(r.accuracy),
                format_number(r.macro_f1),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> ScoreError {
    ScoreError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, out: &str, truth: &str, alpha: f64) -> ScoringRow {
        ScoringRow {
            sample_id: id.into(),
            output_text: out.into(),
            truth: truth.into(),
            alpha,
            task_kind: TaskKind::Common,
            dataset: "watkins".into(),
        }
    }

    #[test]
    fn groups_by_alpha() {
        let rows = vec![
            row("b", "Walrus", "Walrus", 1.0),
            row("a", "Orca", "Walrus", 1.0),
            row("a", "Walrus", "Walrus", 0.5),
        ];
        let (scored, reports) = score_rows(&rows, None, &JudgeConfig::default()).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].alpha, 0.5);
        assert_eq!(reports[0].accuracy, 1.0);
        assert_eq!(reports[1].accuracy, 0.5);
        assert_eq!(scored.iter().map(|s| s.scored.sample_id.as_str()).collect::<Vec<_>>(), ["a", "a", "b"]);
    }

    #[test]
    fn csv_has_one_row_per_category() {
        let rows = vec![row("a", "Walrus", "Walrus", 1.0)];
        let (_, reports) = score_rows(&rows, None, &JudgeConfig::default()).unwrap();
        let mut out = Vec::new();
        write_metrics_csv(&reports, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("1,common,watkins,correct,1,1,1,1,1"));
    }

    #[test]
    fn json_roundtrip() {
        let rows = vec![row("a", "Walrus", "Walrus", 1.0)];
        let (scored, reports) = score_rows(&rows, None, &JudgeConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_metrics_json(&reports, &mut buf).unwrap();
        let back: Vec<MetricsReport> = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, reports);
        let mut buf = Vec::new();
        write_scored_jsonl(&scored, &mut buf).unwrap();
        let back: ScoredRow = serde_json::from_slice(buf.split(|&b| b == b'\n').next().unwrap()).unwrap();
        assert_eq!(back, scored[0]);
    }
}
