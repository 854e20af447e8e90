use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod config;
mod exit;
mod inspect;
mod merge;
mod report;
mod run;
mod score;

use config::ConfigFile;

/// Merge checkpoints along an alpha path and evaluate how prompt
/// robustness changes with it.
#[derive(Parser)]
#[command(name = "alphamerge", version)]
struct Cli {
    /// TOML file with [merge], [sweep], [run], [score] and [report] sections.
    /// Flags override values from the file.
    #[arg(long, global = true, env = "ALPHAMERGE_CONFIG")]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug); RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the tensor table of a checkpoint, or diff two layouts.
    Inspect(inspect::InspectArgs),
    /// Write one merged checkpoint.
    Merge(merge::MergeArgs),
    /// Write one merged checkpoint per alpha plus a manifest.
    Sweep(merge::MergeArgs),
    /// Query a chat endpoint for every sample, prompt kind and alpha.
    Run(run::RunArgs),
    /// Judge outputs and aggregate metrics.
    Score(score::ScoreArgs),
    /// Emit CSV and SVG charts from metrics.
    Report(report::ReportArgs),
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = ConfigFile::load_opt(cli.config.as_deref())?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Inspect(args) => inspect::cmd(&args, &mut out)?,
        Command::Merge(args) => merge::cmd_merge(args.overlay(file.merge), &mut out)?,
        Command::Sweep(args) => merge::cmd_sweep(args.overlay(file.sweep), &mut out)?,
        Command::Run(args) => run::cmd(args.overlay(file.run), &mut out)?,
        Command::Score(args) => score::cmd(args.overlay(file.score), &mut out)?,
        Command::Report(args) => report::cmd(args.overlay(file.report), &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(std::io::stderr)
        .init();

    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e) as u8)
        }
    }
}
