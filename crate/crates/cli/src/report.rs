use std::io::Write;
use std::path::{Path, PathBuf};

use alphamerge::report::{write_report, ReportOptions, SweepSummary};
use alphamerge::scoring::read_metrics;
use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{persist, pick, pick_vec, rebase, rebase_all, require, Resolved};
use crate::exit::ConfigError;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportArgs {
    /// metrics.json files written by `score`; repeatable.
    #[arg(long)]
    pub metrics: Vec<PathBuf>,
    /// Two alphas for the F1 bar comparison, e.g. 1.0,0.4.
    #[arg(long, value_delimiter = ',')]
    pub compare: Vec<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ReportArgs {
    pub fn rebase(&mut self, dir: &Path) {
        rebase_all(&mut self.metrics, dir);
        rebase(&mut self.out, dir);
    }

    pub fn overlay(self, file: ReportArgs) -> ReportArgs {
        ReportArgs {
            metrics: pick_vec(self.metrics, file.metrics),
            compare: pick_vec(self.compare, file.compare),
            out: pick(self.out, file.out),
        }
    }
}

pub fn cmd(args: ReportArgs, out: &mut impl Write) -> Result<()> {
    if args.metrics.is_empty() {
        return Err(ConfigError::new("report needs at least one --metrics file").into());
    }
    let compare = match args.compare[..] {
        [] => None,
        [a, b] => Some((a, b)),
        _ => return Err(ConfigError::new("--compare takes exactly two alphas").into()),
    };
    let dir = require(args.out.clone(), "output directory (--out)")?;
    let mut reports = Vec::new();
    for p in &args.metrics {
        reports.extend(read_metrics(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let summary = SweepSummary::from_reports(&reports)?;
    let paths = write_report(&summary, &ReportOptions { compare }, &dir)?;
    persist(&dir.join("report_config.json"), &Resolved::new("report", &args))?;
    for p in paths {
        writeln!(out, "{}", p.display())?;
    }
    Ok(())
}
