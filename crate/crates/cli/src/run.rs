use std::io::Write;
use std::path::{Path, PathBuf};

use alphamerge::harness::{
    load_manifest, manifest_classes, run, shuffle_labels, ChatClient, EndpointConfig, RetryPolicy, RunSpec,
    SampleFailure, SEED_DERIVATION,
};
use alphamerge::merge::{format_alpha, ALPHA_PLACEHOLDER};
use alphamerge::prompt::{FewShotSpec, PoolItem, PromptTemplate, TemplateKind, SPECIES_LIST};
use alphamerge::scoring::{LabelSet, TaskKind};
use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{persist, pick, pick_vec, read_labels, rebase, require, Resolved};
use crate::exit::{ConfigError, PartialFailure};

pub const RUN_FILE: &str = "run.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// Line-delimited JSON manifest of evaluation samples.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Prompt kinds, comma-separated (common, scientific, combined, closed_set,
    /// zf_original, zf_reversed, zf_noclass, icl_k).
    #[arg(long, value_delimiter = ',')]
    pub kind: Vec<TemplateKind>,
    /// Custom template body file; needs exactly one kind.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Class list, one per line; defaults to the manifest's common names.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Seed-shuffle the species list once per run.
    #[arg(long)]
    pub shuffle_species: bool,
    /// Few-shot examples per class for icl_k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Few-shot pool, line-delimited JSON of {sample_id, audio_ref, label}.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Master seed for example permutations and species shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Merging coefficients to query, comma-separated.
    #[arg(long = "alphas", alias = "alpha", value_delimiter = ',')]
    pub alphas: Vec<f64>,
    /// Endpoint base URL; may contain {alpha}.
    #[arg(long, env = "ALPHAMERGE_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Request path under the base URL.
    #[arg(long)]
    pub endpoint_path: Option<String>,
    /// Served model name; may contain {alpha}.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Initial retry backoff in milliseconds.
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Maximum in-flight requests.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn rebase(&mut self, dir: &Path) {
        for p in [&mut self.manifest, &mut self.template, &mut self.labels, &mut self.pool, &mut self.out] {
            rebase(p, dir);
        }
    }

    pub fn overlay(self, file: RunArgs) -> RunArgs {
        RunArgs {
            manifest: pick(self.manifest, file.manifest),
            kind: pick_vec(self.kind, file.kind),
            template: pick(self.template, file.template),
            labels: pick(self.labels, file.labels),
            shuffle_species: self.shuffle_species || file.shuffle_species,
            k: pick(self.k, file.k),
            pool: pick(self.pool, file.pool),
            seed: pick(self.seed, file.seed),
            alphas: pick_vec(self.alphas, file.alphas),
            endpoint: pick(self.endpoint, file.endpoint),
            endpoint_path: pick(self.endpoint_path, file.endpoint_path),
            model: pick(self.model, file.model),
            temperature: pick(self.temperature, file.temperature),
            max_tokens: pick(self.max_tokens, file.max_tokens),
            timeout_ms: pick(self.timeout_ms, file.timeout_ms),
            max_retries: pick(self.max_retries, file.max_retries),
            backoff_ms: pick(self.backoff_ms, file.backoff_ms),
            api_key_env: pick(self.api_key_env, file.api_key_env),
            concurrency: pick(self.concurrency, file.concurrency),
            out: pick(self.out, file.out),
        }
    }

    fn endpoint_for(&self, alpha: f64) -> Result<EndpointConfig> {
        let defaults = EndpointConfig::default();
        let a = format_alpha(alpha);
        let api_key = self.api_key_env.as_deref().unwrap_or("ALPHAMERGE_API_KEY");
        Ok(EndpointConfig {
            base_url: require(self.endpoint.as_ref(), "endpoint URL (--endpoint or ALPHAMERGE_ENDPOINT)")?
                .replace(ALPHA_PLACEHOLDER, &a),
            path: self.endpoint_path.clone().unwrap_or(defaults.path),
            model: self.model.as_deref().unwrap_or(&defaults.model).replace(ALPHA_PLACEHOLDER, &a),
            temperature: self.temperature.unwrap_or(defaults.temperature),
            max_tokens: self.max_tokens.unwrap_or(defaults.max_tokens),
            timeout_ms: self.timeout_ms.unwrap_or(defaults.timeout_ms),
            send_audio_ref: true,
            api_key: std::env::var(api_key).ok(),
            retry: RetryPolicy {
                max_retries: self.max_retries.unwrap_or(defaults.retry.max_retries),
                initial_ms: self.backoff_ms.unwrap_or(defaults.retry.initial_ms),
                ..defaults.retry
            },
        })
    }
}

fn read_pool(path: &Path) -> Result<Vec<PoolItem>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading pool {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

#[derive(Serialize)]
struct RunEcho<'a> {
    #[serde(flatten)]
    args: &'a RunArgs,
    species_order: Option<&'a [String]>,
    seed_derivation: &'static str,
    endpoints: Vec<EndpointConfig>,
}

pub fn cmd(args: RunArgs, out: &mut impl Write) -> Result<()> {
    let mut args = args;
    let manifest_path = require(args.manifest.clone(), "manifest")?;
    let manifest = load_manifest(&manifest_path).with_context(|| format!("loading {}", manifest_path.display()))?;
    if args.kind.is_empty() {
        args.kind = vec![TemplateKind::Common];
    }
    if args.alphas.is_empty() {
        return Err(ConfigError::new("missing alphas (--alpha/--alphas or config)").into());
    }
    let dir = require(args.out.clone(), "output directory (--out)")?;
    let seed = *args.seed.get_or_insert(0);
    let concurrency = *args.concurrency.get_or_insert(4);

    let templates: Vec<PromptTemplate> = match &args.template {
        Some(path) => {
            let [kind] = args.kind[..] else {
                return Err(ConfigError::new("a custom template needs exactly one kind").into());
            };
            let body = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            vec![PromptTemplate::new(kind, body.trim_end_matches('\n'))?]
        }
        None => args.kind.iter().map(|&k| PromptTemplate::builtin(k)).collect(),
    };

    let needs_labels = templates.iter().any(|t| t.body.contains(SPECIES_LIST) || t.kind == TemplateKind::IclK);
    let labels = if needs_labels || args.labels.is_some() {
        let classes = match &args.labels {
            Some(p) => read_labels(p)?,
            None => manifest_classes(&manifest),
        };
        let set = LabelSet::new(classes, TaskKind::ClosedSet)?;
        Some(if args.shuffle_species { shuffle_labels(&set, seed) } else { set })
    } else {
        None
    };

    let fewshot = if args.kind.contains(&TemplateKind::IclK) {
        let k = *args.k.get_or_insert(0);
        let pool = match &args.pool {
            Some(p) => read_pool(p)?,
            None if k == 0 => Vec::new(),
            None => return Err(ConfigError::new("icl_k with k > 0 needs a few-shot pool").into()),
        };
        Some(FewShotSpec {
            k,
            pool,
            master_seed: seed,
        })
    } else {
        None
    };

    let endpoints = args.alphas.iter().map(|&a| args.endpoint_for(a)).collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(&dir)?;
    persist(
        &dir.join("run_config.json"),
        &Resolved::new(
            "run",
            &RunEcho {
                args: &args,
                species_order: labels.as_ref().map(|l| l.classes.as_slice()),
                seed_derivation: SEED_DERIVATION,
                endpoints: endpoints.clone(),
            },
        ),
    )?;

    let run_file = dir.join(RUN_FILE);
    let runtime = tokio::runtime::Runtime::new()?;
    let mut failures: Vec<SampleFailure> = Vec::new();
    let mut requested = 0;
    for (&alpha, endpoint) in args.alphas.iter().zip(endpoints) {
        let client = ChatClient::new(endpoint).map_err(alphamerge::harness::HarnessError::from)?;
        for template in &templates {
            let spec = RunSpec {
                template: template.clone(),
                labels: labels.clone(),
                fewshot: fewshot.clone(),
                alpha,
                concurrency,
            };
            let summary = runtime.block_on(run(&manifest, &spec, &client, &run_file))?;
            writeln!(
                out,
                "alpha={} kind={} written={} skipped={} failed={}",
                format_alpha(alpha),
                template.kind,
                summary.written,
                summary.skipped,
                summary.failures.len()
            )?;
            requested += summary.requested;
            failures.extend(summary.failures);
        }
    }

    let errors_file = dir.join(ERRORS_FILE);
    if failures.is_empty() {
        if errors_file.exists() {
            std::fs::remove_file(&errors_file)?;
        }
        return Ok(());
    }
    let mut text = String::new();
    for f in &failures {
        text.push_str(&serde_json::to_string(f)?);
        text.push('\n');
    }
    std::fs::write(&errors_file, text)?;
    Err(PartialFailure {
        failed: failures.len(),
        requested,
        errors_file: errors_file.display().to_string(),
    }
    .into())
}
