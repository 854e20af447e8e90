use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use alphamerge::harness::{export_for_scoring, load_manifest, read_run_file};
use alphamerge::report::format_number;
use alphamerge::scoring::{
    read_scoring_rows, score_rows, write_metrics_csv, write_metrics_json, write_scored_jsonl, JudgeConfig,
    ScoringRow, TaskKind, DEFAULT_THRESHOLD,
};
use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{persist, pick, pick_vec, read_labels, rebase, rebase_all, require, Resolved};
use crate::exit::ConfigError;

pub const SCORED_FILE: &str = "scored.jsonl";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreArgs {
    /// Scoring rows (line-delimited JSON); repeatable.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// Run files to join with --manifest; repeatable.
    #[arg(long)]
    pub run: Vec<PathBuf>,
    /// Manifest holding the ground truth for --run.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Score every run record as this task kind.
    #[arg(long)]
    pub kind: Option<TaskKind>,
    /// Class list, one per line; defaults to each group's distinct truths.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Matches need an edit distance strictly below this.
    #[arg(long)]
    pub threshold: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ScoreArgs {
    pub fn rebase(&mut self, dir: &Path) {
        rebase_all(&mut self.input, dir);
        rebase_all(&mut self.run, dir);
        for p in [&mut self.manifest, &mut self.labels, &mut self.out] {
            rebase(p, dir);
        }
    }

    pub fn overlay(self, file: ScoreArgs) -> ScoreArgs {
        ScoreArgs {
            input: pick_vec(self.input, file.input),
            run: pick_vec(self.run, file.run),
            manifest: pick(self.manifest, file.manifest),
            kind: pick(self.kind, file.kind),
            labels: pick(self.labels, file.labels),
            threshold: pick(self.threshold, file.threshold),
            out: pick(self.out, file.out),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn cmd(args: ScoreArgs, out: &mut impl Write) -> Result<()> {
    let mut args = args;
    if args.input.is_empty() && args.run.is_empty() {
        return Err(ConfigError::new("score needs --input or --run").into());
    }
    let dir = require(args.out.clone(), "output directory (--out)")?;
    let threshold = *args.threshold.get_or_insert(DEFAULT_THRESHOLD);

    let mut rows: Vec<ScoringRow> = Vec::new();
    for p in &args.input {
        rows.extend(read_scoring_rows(p).with_context(|| format!("reading {}", p.display()))?);
    }
    if !args.run.is_empty() {
        let manifest_path = require(args.manifest.as_ref(), "manifest for --run")?;
        let manifest = load_manifest(manifest_path)?;
        for p in &args.run {
            let records = read_run_file(p).with_context(|| format!("reading {}", p.display()))?;
            rows.extend(export_for_scoring(&records, &manifest, args.kind)?);
        }
    }
    let labels = args.labels.as_deref().map(read_labels).transpose()?;
    let cfg = JudgeConfig {
        threshold,
        ..Default::default()
    };
    let (scored, reports) = score_rows(&rows, labels.as_deref(), &cfg)?;

    std::fs::create_dir_all(&dir)?;
    let mut w = create(&dir.join(SCORED_FILE))?;
    write_scored_jsonl(&scored, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join(METRICS_JSON))?;
    write_metrics_json(&reports, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join(METRICS_CSV))?;
    write_metrics_csv(&reports, &mut w)?;
    w.flush()?;
    persist(&dir.join("score_config.json"), &Resolved::new("score", &args))?;

    writeln!(out, "{:>6}  {:<12}  {:<20}  {:>5}  {:>9}  {:>9}", "alpha", "kind", "dataset", "n", "accuracy", "macro_f1")?;
    for r in &reports {
        writeln!(
            out,
            "{:>6}  {:<12}  {:<20}  {:>5}  {:>9.4}  {:>9.4}",
            format_number(r.alpha),
            r.task_kind,
            r.dataset,
            r.n,
            r.accuracy,
            r.macro_f1
        )?;
    }
    Ok(())
}
