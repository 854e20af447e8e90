use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use alphamerge::tensorstore::{Checkpoint, CheckpointIndex, ParseOptions};
use anyhow::{Context, Result};
use clap::Args;

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint to describe.
    pub path: PathBuf,
    /// Compare tensor names, shapes and dtypes against a second checkpoint.
    #[arg(long)]
    pub diff: Option<PathBuf>,
    /// Accept unused bytes between tensors.
    #[arg(long)]
    pub allow_gaps: bool,
}

fn shape(s: &[usize]) -> String {
    let parts: Vec<String> = s.iter().map(usize::to_string).collect();
    format!("[{}]", parts.join(", "))
}

fn open(path: &PathBuf, allow_gaps: bool) -> Result<Checkpoint> {
    Checkpoint::open_with(path, ParseOptions { allow_gaps }).with_context(|| format!("reading {}", path.display()))
}

pub fn table(index: &CheckpointIndex, out: &mut impl Write) -> std::io::Result<()> {
    let name_w = index.names().map(str::len).max().unwrap_or(4).max(4);
    writeln!(out, "{:<name_w$}  {:<5}  {:<20}  {:>12}", "name", "dtype", "shape", "bytes")?;
    let mut elements = 0usize;
    for e in index.entries.values() {
        elements += e.numel();
        writeln!(
            out,
            "{:<name_w$}  {:<5}  {:<20}  {:>12}",
            e.name,
            e.dtype.as_str(),
            shape(&e.shape),
            e.byte_len()
        )?;
    }
    writeln!(
        out,
        "{} tensor(s), {} element(s), {} payload byte(s), {} header byte(s)",
        index.entries.len(),
        elements,
        index.payload_len(),
        index.header_len
    )?;
    for (k, v) in &index.metadata {
        writeln!(out, "metadata {k} = {v}")?;
    }
    Ok(())
}

/// Lines describing layout differences; empty when the layouts match.
pub fn diff(a: &CheckpointIndex, b: &CheckpointIndex) -> Vec<String> {
    let names: BTreeSet<&str> = a.names().chain(b.names()).collect();
    let mut out = Vec::new();
    for name in names {
        match (a.entries.get(name), b.entries.get(name)) {
            (Some(_), None) => out.push(format!("- {name} (only in first)")),
            (None, Some(_)) => out.push(format!("+ {name} (only in second)")),
            (Some(x), Some(y)) => {
                if x.shape != y.shape {
                    out.push(format!("~ {name} shape {} vs {}", shape(&x.shape), shape(&y.shape)));
                }
                if x.dtype != y.dtype {
                    out.push(format!("~ {name} dtype {} vs {}", x.dtype, y.dtype));
                }
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

pub fn cmd(args: &InspectArgs, out: &mut impl Write) -> Result<()> {
    let a = open(&args.path, args.allow_gaps)?;
    match &args.diff {
        None => table(&a.index, out)?,
        Some(other) => {
            let b = open(other, args.allow_gaps)?;
            let lines = diff(&a.index, &b.index);
            if lines.is_empty() {
                writeln!(out, "layouts match ({} tensor(s))", a.index.entries.len())?;
            }
            for l in lines {
                writeln!(out, "{l}")?;
            }
        }
    }
    Ok(())
}
