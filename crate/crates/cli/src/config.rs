//! TOML config file with one section per subcommand.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::exit::ConfigError;
use crate::merge::MergeArgs;
use crate::report::ReportArgs;
use crate::run::RunArgs;
use crate::score::ScoreArgs;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub merge: MergeArgs,
    pub sweep: MergeArgs,
    pub run: RunArgs,
    pub score: ScoreArgs,
    pub report: ReportArgs,
}

impl ConfigFile {
    /// Reads `path`; relative paths inside are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ConfigFile =
            toml::from_str(&text).map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        cfg.merge.rebase(dir);
        cfg.sweep.rebase(dir);
        cfg.run.rebase(dir);
        cfg.score.rebase(dir);
        cfg.report.rebase(dir);
        Ok(cfg)
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(ConfigFile::default()), Self::load)
    }
}

pub fn rebase(p: &mut Option<PathBuf>, dir: &Path) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = dir.join(&*path);
        }
    }
}

pub fn rebase_all(ps: &mut [PathBuf], dir: &Path) {
    for p in ps.iter_mut().filter(|p| p.is_relative()) {
        *p = dir.join(&*p);
    }
}

/// Flag value if given, else the config value.
pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

pub fn pick_vec<T>(flag: Vec<T>, file: Vec<T>) -> Vec<T> {
    if flag.is_empty() {
        file
    } else {
        flag
    }
}

pub fn require<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| ConfigError::new(format!("missing {what} (flag or config)")).into())
}

/// Writes the resolved configuration as pretty JSON.
pub fn persist<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Class names, one per line; blank lines are skipped.
pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading labels {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[derive(Debug, Serialize)]
pub struct Resolved<'a, T: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    #[serde(flatten)]
    pub args: &'a T,
}

impl<'a, T: Serialize> Resolved<'a, T> {
    pub fn new(command: &'static str, args: &'a T) -> Self {
        Resolved {
            command,
            version: env!("CARGO_PKG_VERSION"),
            args,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_rebasing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("study.toml");
        std::fs::write(
            &path,
            r#"
[sweep]
base = "base.safetensors"
alphas = [0.0, 0.5, 1.0]
mode = "interp"

[score]
threshold = 3
run = ["runs/run.jsonl"]
"#,
        )
        .unwrap();
        let cfg = ConfigFile::load(&path).unwrap();
        assert_eq!(cfg.sweep.base.unwrap(), dir.path().join("base.safetensors"));
        assert_eq!(cfg.sweep.alphas, [0.0, 0.5, 1.0]);
        assert_eq!(cfg.score.threshold, Some(3));
        assert_eq!(cfg.score.run, [dir.path().join("runs/run.jsonl")]);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[score]\nthreshhold = 3\n").unwrap();
        let err = ConfigFile::load(&path).unwrap_err();
        assert_eq!(crate::exit::code(&err), crate::exit::CONFIG);
    }
}
