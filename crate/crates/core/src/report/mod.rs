//! Sweep summaries rendered as CSV tables and hand-written SVG charts.
//!
//! Every SVG data mark carries `data-*` attributes holding the exact strings
//! written to the matching CSV, so the two can be cross-checked.

mod svg;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{Category, MetricsReport, TaskKind};
use svg::{color, nice_max, ticks, Canvas, Scale};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("summary has no rows")]
    EmptySummary,
    #[error("duplicate summary row for alpha {alpha}, {task_kind}, dataset {dataset:?}")]
    DuplicateRow {
        alpha: f64,
        task_kind: TaskKind,
        dataset: String,
    },
    #[error("no row for alpha {0} in any series")]
    MissingAlpha(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

/// Number formatting shared by CSV and SVG output (shortest round-trip).
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub alpha: f64,
    pub task_kind: TaskKind,
    pub dataset: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub category_rates: BTreeMap<Category, f64>,
}

/// Rows unique on (alpha, task kind, dataset), sorted by series then alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SummaryRow>,
}

type SeriesKey = (TaskKind, String);

impl SweepSummary {
    pub fn from_reports(reports: &[MetricsReport]) -> Result<Self> {
        let rows = reports
            .iter()
            .map(|r| SummaryRow {
                alpha: r.alpha,
                task_kind: r.task_kind,
                dataset: r.dataset.clone(),
                accuracy: r.accuracy,
                macro_f1: r.macro_f1,
                category_rates: r.category_rates.clone(),
            })
            .collect();
        Self::new(rows)
    }

    pub fn new(mut rows: Vec<SummaryRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(ReportError::EmptySummary);
        }
        rows.sort_by(|a, b| {
            (a.task_kind, &a.dataset)
                .cmp(&(b.task_kind, &b.dataset))
                .then(a.alpha.total_cmp(&b.alpha))
        });
        if let Some(w) = rows
            .windows(2)
            .find(|w| w[0].task_kind == w[1].task_kind && w[0].dataset == w[1].dataset && w[0].alpha == w[1].alpha)
        {
            return Err(ReportError::DuplicateRow {
                alpha: w[0].alpha,
                task_kind: w[0].task_kind,
                dataset: w[0].dataset.clone(),
            });
        }
        Ok(SweepSummary { rows })
    }

    /// Rows grouped per (task kind, dataset), alphas ascending.
    pub fn series(&self) -> BTreeMap<SeriesKey, Vec<&SummaryRow>> {
        let mut out: BTreeMap<SeriesKey, Vec<&SummaryRow>> = BTreeMap::new();
        for r in &self.rows {
            out.entry((r.task_kind, r.dataset.clone())).or_default().push(r);
        }
        out
    }

    fn alphas(&self) -> Vec<f64> {
        let mut a: Vec<f64> = self.rows.iter().map(|r| r.alpha).collect();
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    }

    fn find(&self, kind: TaskKind, dataset: &str, alpha: f64) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.task_kind == kind && r.dataset == dataset && r.alpha == alpha)
    }
}

fn series_label(kind: TaskKind, dataset: &str) -> String {
    if dataset.is_empty() {
        kind.to_string()
    } else {
        format!("{kind} / {dataset}")
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

fn alpha_ticks(alphas: &[f64]) -> Vec<(f64, String)> {
    alphas.iter().map(|&a| (a, format_number(a))).collect()
}

fn alpha_scale(alphas: &[f64]) -> Scale {
    let (px_lo, px_hi) = Canvas::x_px();
    let lo = alphas.first().copied().unwrap_or(0.0);
    let hi = alphas.last().copied().unwrap_or(1.0);
    // Inset so end markers stay clear of the axes.
    let pad = (px_hi - px_lo) * 0.05;
    Scale {
        lo,
        hi,
        px_lo: px_lo + pad,
        px_hi: px_hi - pad,
    }
}

fn unit_y() -> Scale {
    let (px_lo, px_hi) = Canvas::y_px();
    Scale {
        lo: 0.0,
        hi: 1.0,
        px_lo,
        px_hi,
    }
}

/// One emitted artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub file_name: String,
    pub contents: String,
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Accuracy against alpha, one line per (task kind, dataset).
pub fn accuracy_vs_alpha(summary: &SweepSummary) -> (Artifact, Artifact) {
    let alphas = summary.alphas();
    let x = alpha_scale(&alphas);
    let y = unit_y();
    let mut canvas = Canvas::new("Accuracy vs. merging coefficient");
    canvas.axes(x, y, &alpha_ticks(&alphas), &ticks(1.0, 0.2), "alpha", "accuracy");

    let mut rows = Vec::new();
    for (i, ((kind, dataset), series)) in summary.series().into_iter().enumerate() {
        let c = color(i);
        let label = series_label(kind, &dataset);
        let points: Vec<String> = series
            .iter()
            .map(|r| format!("{:.2},{:.2}", x.map(r.alpha), y.map(r.accuracy)))
            .collect();
        if points.len() > 1 {
            canvas.raw(&format!(
                r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#,
                points.join(" ")
            ));
        }
        for r in &series {
            let (a, v) = (format_number(r.alpha), format_number(r.accuracy));
            canvas.raw(&format!(
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{c}" data-series="{}" data-alpha="{a}" data-value="{v}"/>"#,
                x.map(r.alpha),
                y.map(r.accuracy),
                svg::escape(&label)
            ));
            rows.push(vec![label.clone(), kind.to_string(), dataset.clone(), a, v]);
        }
        canvas.legend_entry(label, c);
    }
    (
        Artifact {
            file_name: "accuracy_vs_alpha.csv".into(),
            contents: csv_text(&["series", "task_kind", "dataset", "alpha", "accuracy"], &rows),
        },
        Artifact {
            file_name: "accuracy_vs_alpha.svg".into(),
            contents: canvas.finish(),
        },
    )
}

/// Combined-prompt accuracy against the mean of the common- and
/// scientific-name accuracies, traced over alpha per dataset. `None` when no
/// alpha has all three prompt kinds.
pub fn combined_vs_individual(summary: &SweepSummary) -> Option<(Artifact, Artifact)> {
    let datasets: BTreeSet<&str> = summary.rows.iter().map(|r| r.dataset.as_str()).collect();
    let mut traces = Vec::new();
    for ds in datasets {
        let mut pts = Vec::new();
        for alpha in summary.alphas() {
            let (Some(c), Some(s), Some(comb)) = (
                summary.find(TaskKind::Common, ds, alpha),
                summary.find(TaskKind::Scientific, ds, alpha),
                summary.find(TaskKind::Combined, ds, alpha),
            ) else {
                continue;
            };
            pts.push((alpha, (c.accuracy + s.accuracy) / 2.0, comb.accuracy));
        }
        if !pts.is_empty() {
            traces.push((ds.to_string(), pts));
        }
    }
    if traces.is_empty() {
        return None;
    }

    let (px_lo, px_hi) = Canvas::x_px();
    let x = Scale {
        lo: 0.0,
        hi: 1.0,
        px_lo,
        px_hi,
    };
    let y = unit_y();
    let mut canvas = Canvas::new("Combined prompt vs. individual prompts");
    let xt: Vec<(f64, String)> = ticks(1.0, 0.2).into_iter().map(|t| (t, format_number(t))).collect();
    canvas.axes(
        x,
        y,
        &xt,
        &ticks(1.0, 0.2),
        "mean accuracy (common, scientific)",
        "combined accuracy",
    );
    let mut rows = Vec::new();
    for (i, (ds, pts)) in traces.into_iter().enumerate() {
        let c = color(i);
        let coords: Vec<String> = pts
            .iter()
            .map(|&(_, mx, cy)| format!("{:.2},{:.2}", x.map(mx), y.map(cy)))
            .collect();
        if coords.len() > 1 {
            canvas.raw(&format!(
                r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" stroke-dasharray="4 3" points="{}"/>"#,
                coords.join(" ")
            ));
        }
        for (alpha, mean, comb) in pts {
            let (a, xs, ys) = (format_number(alpha), format_number(mean), format_number(comb));
            let (px, py) = (x.map(mean), y.map(comb));
            canvas.raw(&format!(
                r#"<circle cx="{px:.2}" cy="{py:.2}" r="5" fill="{c}" data-series="{}" data-alpha="{a}" data-x="{xs}" data-y="{ys}"/>"#,
                svg::escape(&ds)
            ));
            canvas.raw(&format!(
                r#"<text x="{:.2}" y="{:.2}" font-size="10">α={a}</text>"#,
                px + 7.0,
                py - 6.0
            ));
            rows.push(vec![ds.clone(), a, xs, ys]);
        }
        canvas.legend_entry(if ds.is_empty() { "all".to_string() } else { ds }, c);
    }
    Some((
        Artifact {
            file_name: "combined_vs_individual.csv".into(),
            contents: csv_text(&["dataset", "alpha", "individual_mean_accuracy", "combined_accuracy"], &rows),
        },
        Artifact {
            file_name: "combined_vs_individual.svg".into(),
            contents: canvas.finish(),
        },
    ))
}

/// Stacked error-category bars against alpha; one chart per series, one CSV
/// row per alpha per category.
pub fn error_breakdown(summary: &SweepSummary) -> Vec<Artifact> {
    let mut rows = Vec::new();
    let mut charts = Vec::new();
    for ((kind, dataset), series) in summary.series() {
        let label = series_label(kind, &dataset);
        let alphas: Vec<f64> = series.iter().map(|r| r.alpha).collect();
        let (px_lo, px_hi) = Canvas::x_px();
        let slot = (px_hi - px_lo) / alphas.len() as f64;
        let bar_w = (slot * 0.6).min(60.0);
        let y = unit_y();
        let mut canvas = Canvas::new(&format!("Error breakdown: {label}"));
        let x = Scale {
            lo: 0.0,
            hi: alphas.len() as f64,
            px_lo,
            px_hi,
        };
        let xt: Vec<(f64, String)> = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| (i as f64 + 0.5, format_number(a)))
            .collect();
        canvas.axes(x, y, &xt, &ticks(1.0, 0.2), "alpha", "rate");
        for (i, r) in series.iter().enumerate() {
            let cx = x.map(i as f64 + 0.5);
            let mut cum = 0.0;
            for (ci, cat) in Category::ALL.into_iter().enumerate() {
                let rate = r.category_rates.get(&cat).copied().unwrap_or(0.0);
                let (top, bottom) = (y.map(cum + rate), y.map(cum));
                let (a, v) = (format_number(r.alpha), format_number(rate));
                canvas.raw(&format!(
                    r#"<rect x="{:.2}" y="{top:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}" data-alpha="{a}" data-category="{}" data-value="{v}"/>"#,
                    cx - bar_w / 2.0,
                    bottom - top,
                    color(ci),
                    cat.as_str()
                ));
                rows.push(vec![kind.to_string(), dataset.clone(), a, cat.as_str().to_string(), v]);
                cum += rate;
            }
        }
        for (ci, cat) in Category::ALL.into_iter().enumerate() {
            canvas.legend_entry(cat.as_str(), color(ci));
        }
        let stem = if dataset.is_empty() {
            slug(kind.as_str())
        } else {
            format!("{}_{}", slug(kind.as_str()), slug(&dataset))
        };
        charts.push(Artifact {
            file_name: format!("error_breakdown_{stem}.svg"),
            contents: canvas.finish(),
        });
    }
    let mut out = vec![Artifact {
        file_name: "error_breakdown.csv".into(),
        contents: csv_text(&["task_kind", "dataset", "alpha", "category", "rate"], &rows),
    }];
    out.extend(charts);
    out
}

/// Macro-F1 bars at two alphas for every series that has both.
pub fn f1_comparison(summary: &SweepSummary, first: f64, second: f64) -> Result<(Artifact, Artifact)> {
    for a in [first, second] {
        if !summary.rows.iter().any(|r| r.alpha == a) {
            return Err(ReportError::MissingAlpha(a));
        }
    }
    let groups: Vec<(String, [&SummaryRow; 2])> = summary
        .series()
        .into_iter()
        .filter_map(|((kind, ds), _)| {
            let l = summary.find(kind, &ds, first)?;
            let r = summary.find(kind, &ds, second)?;
            Some((series_label(kind, &ds), [l, r]))
        })
        .collect();

    let max = groups
        .iter()
        .flat_map(|(_, pair)| pair.iter().map(|r| r.macro_f1))
        .fold(0.0f64, f64::max);
    let y_max = nice_max(max);
    let (py_lo, py_hi) = Canvas::y_px();
    let y = Scale {
        lo: 0.0,
        hi: y_max,
        px_lo: py_lo,
        px_hi: py_hi,
    };
    let (px_lo, px_hi) = Canvas::x_px();
    let n = groups.len().max(1);
    let x = Scale {
        lo: 0.0,
        hi: n as f64,
        px_lo,
        px_hi,
    };
    let slot = (px_hi - px_lo) / n as f64;
    let bar_w = (slot * 0.3).min(70.0);
    let step = if y_max > 0.5 { 0.2 } else { 0.1 };

    let mut canvas = Canvas::new(&format!(
        "Macro-F1: alpha = {} vs. alpha = {}",
        format_number(first),
        format_number(second)
    ));
    let xt: Vec<(f64, String)> = groups
        .iter()
        .enumerate()
        .map(|(i, (label, _))| (i as f64 + 0.5, label.clone()))
        .collect();
    canvas.axes(x, y, &xt, &ticks(y_max, step), "", "macro-F1");
    let mut rows = Vec::new();
    for (i, (label, pair)) in groups.iter().enumerate() {
        let cx = x.map(i as f64 + 0.5);
        for (j, r) in pair.iter().enumerate() {
            let left = cx - bar_w + j as f64 * bar_w;
            let top = y.map(r.macro_f1);
            let (a, v) = (format_number(r.alpha), format_number(r.macro_f1));
            canvas.raw(&format!(
                r#"<rect x="{left:.2}" y="{top:.4}" width="{bar_w:.2}" height="{:.4}" fill="{}" data-series="{}" data-alpha="{a}" data-value="{v}"/>"#,
                py_lo - top,
                color(j),
                svg::escape(label)
            ));
            let mut text = String::new();
            let _ = write!(
                text,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{v}</text>"#,
                left + bar_w / 2.0,
                top - 4.0
            );
            canvas.raw(&text);
            rows.push(vec![label.clone(), r.task_kind.to_string(), r.dataset.clone(), a, v]);
        }
    }
    canvas.legend_entry(format!("alpha = {}", format_number(first)), color(0));
    canvas.legend_entry(format!("alpha = {}", format_number(second)), color(1));
    Ok((
        Artifact {
            file_name: "f1_comparison.csv".into(),
            contents: csv_text(&["series", "task_kind", "dataset", "alpha", "macro_f1"], &rows),
        },
        Artifact {
            file_name: "f1_comparison.svg".into(),
            contents: canvas.finish(),
        },
    ))
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Two alphas for the F1 bar comparison.
    pub compare: Option<(f64, f64)>,
}

/// Renders every applicable chart.
pub fn render(summary: &SweepSummary, opts: &ReportOptions) -> Result<Vec<Artifact>> {
    let mut out = Vec::new();
    let (c, s) = accuracy_vs_alpha(summary);
    out.extend([c, s]);
    if let Some((c, s)) = combined_vs_individual(summary) {
        out.extend([c, s]);
    }
    out.extend(error_breakdown(summary));
    if let Some((a, b)) = opts.compare {
        let (c, s) = f1_comparison(summary, a, b)?;
        out.extend([c, s]);
    }
    Ok(out)
}

/// Renders and writes every chart into `dir`, returning the written paths.
pub fn write_report(summary: &SweepSummary, opts: &ReportOptions, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for a in render(summary, opts)? {
        let p = dir.join(&a.file_name);
        std::fs::write(&p, a.contents)?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(alpha: f64, kind: TaskKind, acc: f64) -> SummaryRow {
        let rates = BTreeMap::from([
            (Category::Correct, acc),
            (Category::InSetConfusion, (1.0 - acc) / 2.0),
            (Category::OutOfSet, (1.0 - acc) / 2.0),
            (Category::Abstention, 0.0),
        ]);
        SummaryRow {
            alpha,
            task_kind: kind,
            dataset: "watkins".into(),
            accuracy: acc,
            macro_f1: acc,
            category_rates: rates,
        }
    }

    #[test]
    fn empty_and_duplicate() {
        assert!(matches!(SweepSummary::new(vec![]), Err(ReportError::EmptySummary)));
        let r = row(0.5, TaskKind::Common, 0.5);
        assert!(matches!(SweepSummary::new(vec![r.clone(), r]), Err(ReportError::DuplicateRow { .. })));
    }

    #[test]
    fn single_row_degenerates_to_marker() {
        let s = SweepSummary::new(vec![row(0.5, TaskKind::Common, 0.5)]).unwrap();
        let (csv, svg) = accuracy_vs_alpha(&s);
        assert_eq!(csv.contents.lines().count(), 2);
        assert_eq!(svg.contents.matches("<circle").count(), 1);
        assert!(!svg.contents.contains("<polyline"));
        assert!(svg.contents.contains(r#"viewBox="0 0 800 500""#));
    }

    #[test]
    fn combined_scatter_needs_all_three_kinds() {
        let s = SweepSummary::new(vec![row(0.5, TaskKind::Common, 0.5)]).unwrap();
        assert!(combined_vs_individual(&s).is_none());
        let s = SweepSummary::new(vec![
            row(0.5, TaskKind::Common, 0.8),
            row(0.5, TaskKind::Scientific, 0.6),
            row(0.5, TaskKind::Combined, 0.45),
        ])
        .unwrap();
        let (csv, _) = combined_vs_individual(&s).unwrap();
        assert!(csv.contents.contains("watkins,0.5,0.7"), "{}", csv.contents);
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = SweepSummary::new(vec![
            row(0.0, TaskKind::Common, 0.2),
            row(1.0, TaskKind::Common, 0.8),
            row(0.5, TaskKind::Common, 0.6),
        ])
        .unwrap();
        let opts = ReportOptions {
            compare: Some((1.0, 0.0)),
        };
        assert_eq!(render(&s, &opts).unwrap(), render(&s, &opts).unwrap());
        assert!(matches!(
            f1_comparison(&s, 0.3, 1.0),
            Err(ReportError::MissingAlpha(a)) if a == 0.3
        ));
    }

    #[test]
    fn formatting() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(0.8), "0.8");
        assert_eq!(format_number(1.0), "1");
    }
}
