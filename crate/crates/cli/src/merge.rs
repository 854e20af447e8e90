use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use alphamerge::merge::{
    apply_lora, format_alpha, interpolate, materialize, sweep, write_merged, AdapterConfig, LoraAdapter, MergeError,
    MergeInput, MergeMode, MergeOptions, MergeSpec, NameRule, SweepOptions,
};
use alphamerge::tensorstore::{Checkpoint, DType};
use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{persist, pick, pick_vec, rebase, require, Resolved};
use crate::exit::ConfigError;

pub const DEFAULT_NAMING: &str = "merged_{alpha}.safetensors";

/// Options shared by `merge` and `sweep`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeArgs {
    /// Base (pre-trained) checkpoint.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Fully fine-tuned checkpoint.
    #[arg(long, conflicts_with = "adapter")]
    pub fine_tuned: Option<PathBuf>,
    /// LoRA adapter checkpoint.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// Adapter config JSON; defaults to adapter_config.json next to the adapter.
    #[arg(long)]
    pub adapter_config: Option<PathBuf>,
    /// interp or lora; inferred from the inputs when omitted.
    #[arg(long)]
    pub mode: Option<MergeMode>,
    /// Single merging coefficient.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated coefficients for a sweep.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    /// Output dtype (F32, F16, BF16); defaults to each base tensor's dtype.
    #[arg(long)]
    pub dtype: Option<DType>,
    /// Sweep file name pattern containing {alpha}.
    #[arg(long)]
    pub naming: Option<String>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Allow alpha outside [0, 1].
    #[arg(long)]
    pub extrapolate: bool,
    /// Replace existing outputs.
    #[arg(long)]
    pub overwrite: bool,
    /// Output file (merge) or directory (sweep).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl MergeArgs {
    pub fn rebase(&mut self, dir: &Path) {
        for p in [&mut self.base, &mut self.fine_tuned, &mut self.adapter, &mut self.adapter_config, &mut self.out] {
            rebase(p, dir);
        }
    }

    pub fn overlay(self, file: MergeArgs) -> MergeArgs {
        MergeArgs {
            base: pick(self.base, file.base),
            fine_tuned: pick(self.fine_tuned, file.fine_tuned),
            adapter: pick(self.adapter, file.adapter),
            adapter_config: pick(self.adapter_config, file.adapter_config),
            mode: pick(self.mode, file.mode),
            alpha: pick(self.alpha, file.alpha),
            alphas: pick_vec(self.alphas, file.alphas),
            dtype: pick(self.dtype, file.dtype),
            naming: pick(self.naming, file.naming),
            workers: pick(self.workers, file.workers),
            extrapolate: self.extrapolate || file.extrapolate,
            overwrite: self.overwrite || file.overwrite,
            out: pick(self.out, file.out),
        }
    }

    fn options(&self) -> MergeOptions {
        MergeOptions {
            output_dtype: self.dtype,
            workers: self.workers.unwrap_or(0),
            extrapolate: self.extrapolate,
        }
    }

    /// Fills in the mode from the inputs and checks they agree.
    fn resolve_mode(&mut self) -> Result<MergeMode> {
        let mode = match (self.mode, &self.fine_tuned, &self.adapter) {
            (_, Some(_), Some(_)) => return Err(ConfigError::new("give either fine_tuned or adapter, not both").into()),
            (_, None, None) => return Err(ConfigError::new("missing fine_tuned or adapter (flag or config)").into()),
            (Some(m), _, _) => m,
            (None, Some(_), None) => MergeMode::Interpolate,
            (None, None, Some(_)) => MergeMode::LoraRescale,
        };
        self.mode = Some(mode);
        Ok(mode)
    }
}

struct Inputs {
    base: Checkpoint,
    fine_tuned: Option<Checkpoint>,
    adapter: Option<LoraAdapter>,
}

impl Inputs {
    fn load(args: &MergeArgs) -> Result<Self> {
        let base_path = require(args.base.as_ref(), "base checkpoint")?;
        let base = Checkpoint::open(base_path).with_context(|| format!("reading base {}", base_path.display()))?;
        let fine_tuned = match &args.fine_tuned {
            Some(p) => Some(Checkpoint::open(p).with_context(|| format!("reading fine-tuned {}", p.display()))?),
            None => None,
        };
        let adapter = match &args.adapter {
            Some(p) => Some(load_adapter(p, args.adapter_config.as_deref(), &base)?),
            None => None,
        };
        Ok(Inputs {
            base,
            fine_tuned,
            adapter,
        })
    }

    fn input(&self) -> MergeInput<'_> {
        match (&self.fine_tuned, &self.adapter) {
            (Some(ft), _) => MergeInput::FineTuned(ft),
            (None, Some(a)) => MergeInput::Adapter(a),
            (None, None) => unreachable!("checked by resolve_mode"),
        }
    }
}

fn load_adapter(path: &Path, config: Option<&Path>, base: &Checkpoint) -> Result<LoraAdapter> {
    let ckpt = Checkpoint::open(path).with_context(|| format!("reading adapter {}", path.display()))?;
    let sibling = path.with_file_name("adapter_config.json");
    let config_path = config.map(Path::to_path_buf).or_else(|| sibling.exists().then_some(sibling));
    let config = match &config_path {
        Some(p) => Some(AdapterConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let numerator = config.as_ref().and_then(|c| c.lora_alpha);
    let adapter = LoraAdapter::load(&ckpt, &base.index, &NameRule::default(), numerator)?;
    if let Some(r) = config.and_then(|c| c.r) {
        if let Some(p) = adapter.pairs.iter().find(|p| p.rank != r) {
            return Err(MergeError::RankMismatch(format!(
                "adapter config says r = {r} but {} has rank {}",
                p.target, p.rank
            ))
            .into());
        }
    }
    Ok(adapter)
}

pub fn cmd_merge(args: MergeArgs, out: &mut impl Write) -> Result<()> {
    let mut args = args;
    let mode = args.resolve_mode()?;
    let alpha = match (args.alpha, args.alphas.as_slice()) {
        (Some(a), _) => a,
        (None, [a]) => *a,
        _ => return Err(ConfigError::new("merge needs exactly one --alpha").into()),
    };
    args.alpha = Some(alpha);
    let dest = require(args.out.clone(), "output path (--out)")?;
    if dest.exists() && !args.overwrite {
        return Err(MergeError::OutputExists(dest).into());
    }
    let inputs = Inputs::load(&args)?;
    let opts = args.options();
    let tensors = match (mode, inputs.input()) {
        (MergeMode::Interpolate, MergeInput::FineTuned(ft)) => interpolate(&inputs.base, ft, alpha, &opts)?,
        (MergeMode::Interpolate, MergeInput::Adapter(a)) => {
            let ft = materialize(&inputs.base, a, &opts)?;
            interpolate(&inputs.base, &ft, alpha, &opts)?
        }
        (MergeMode::LoraRescale, MergeInput::Adapter(a)) => apply_lora(&inputs.base, a, alpha, &opts)?,
        (MergeMode::LoraRescale, MergeInput::FineTuned(_)) => {
            return Err(MergeError::ModeMismatch("lora mode needs an adapter, not a fine-tuned checkpoint".into()).into())
        }
    };
    let mut metadata: BTreeMap<String, String> = inputs.base.index.metadata.clone();
    metadata.insert("merge.alpha".into(), format_alpha(alpha));
    metadata.insert("merge.mode".into(), mode.as_str().into());
    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let sha256 = write_merged(&dest, &tensors, &metadata)?;

    #[derive(Serialize)]
    struct Echo<'a> {
        #[serde(flatten)]
        args: &'a MergeArgs,
        sha256: &'a str,
    }
    let mut cfg_name = dest.file_name().unwrap_or_default().to_os_string();
    cfg_name.push(".config.json");
    persist(
        &dest.with_file_name(cfg_name),
        &Resolved::new("merge", &Echo { args: &args, sha256: &sha256 }),
    )?;
    writeln!(out, "{}  {}", sha256, dest.display())?;
    Ok(())
}

pub fn cmd_sweep(args: MergeArgs, out: &mut impl Write) -> Result<()> {
    let mut args = args;
    let mode = args.resolve_mode()?;
    if args.alphas.is_empty() {
        args.alphas = args.alpha.into_iter().collect();
    }
    args.alpha = None;
    let dir = require(args.out.clone(), "output directory (--out)")?;
    args.naming.get_or_insert_with(|| DEFAULT_NAMING.to_string());
    let spec = MergeSpec {
        mode,
        alphas: args.alphas.clone(),
        output_dtype: args.dtype,
        output_naming: args.naming.clone().unwrap_or_default(),
    };
    spec.validate(args.extrapolate)?;
    let inputs = Inputs::load(&args)?;
    let opts = SweepOptions {
        merge: args.options(),
        overwrite: args.overwrite,
    };
    let entries = sweep(&inputs.base, inputs.input(), &spec, &dir, &opts)?;
    persist(&dir.join("sweep_config.json"), &Resolved::new("sweep", &args))?;
    for e in entries {
        writeln!(out, "{}  {}  alpha={}", e.sha256, dir.join(&e.path).display(), format_alpha(e.alpha))?;
    }
    Ok(())
}
