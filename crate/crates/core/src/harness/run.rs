use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, Semaphore};

use super::{check_manifest, read_run_file, ChatClient, Completion, EndpointError, RecordKey, Result, RunRecord};
use crate::prompt::{render_prompt, EvalSample, FewShotSpec, PromptTemplate, TemplateKind};
use crate::scoring::LabelSet;

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub template: PromptTemplate,
    pub labels: Option<LabelSet>,
    pub fewshot: Option<FewShotSpec>,
    pub alpha: f64,
    /// Maximum in-flight requests.
    pub concurrency: usize,
}

/// A sample whose request failed after all retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub alpha: f64,
    pub kind: TemplateKind,
    pub error: String,
    pub attempts: u32,
    pub status: Option<u16>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub requested: usize,
    pub written: usize,
    pub skipped: usize,
    pub failures: Vec<SampleFailure>,
}

/// Cuts an unterminated final line left by an interrupted write.
fn repair_tail(path: &Path) -> Result<()> {
    let mut f = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    tracing::warn!(path = %path.display(), dropped = bytes.len() - keep, "dropping unterminated final line");
    f.set_len(keep as u64)?;
    f.seek(SeekFrom::End(0))?;
    Ok(())
}

fn existing_keys(path: &Path) -> Result<HashSet<RecordKey>> {
    repair_tail(path)?;
    if !path.exists() {
        return Ok(HashSet::new());
    }
    Ok(read_run_file(path)?.iter().map(RunRecord::key).collect())
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

struct Pending {
    sample_id: String,
    audio_ref: String,
    prompt: String,
    permutation_seed: u64,
}

type Outcome = (usize, std::result::Result<Completion, EndpointError>, u64);

/// Queries the endpoint for every sample not already in `run_file`.
///
/// Requests run with at most `spec.concurrency` in flight; records are
/// appended in sample_id order by a single writer. Failed samples are
/// reported in the summary and retried on the next resume.
pub async fn run(manifest: &[EvalSample], spec: &RunSpec, client: &ChatClient, run_file: &Path) -> Result<RunSummary> {
    check_manifest(manifest)?;
    if let Some(fewshot) = &spec.fewshot {
        fewshot.check_disjoint(manifest.iter().map(|s| s.sample_id.as_str()))?;
    }
    let done = existing_keys(run_file)?;

    let mut samples: Vec<&EvalSample> = manifest.iter().collect();
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let kind = spec.template.kind;
    let mut pending = Vec::new();
    for s in samples {
        if done.contains(&(s.sample_id.clone(), spec.alpha.to_bits(), kind)) {
            continue;
        }
        let rendered = render_prompt(s, &spec.template, spec.labels.as_ref(), spec.fewshot.as_ref())?;
        pending.push(Pending {
            sample_id: s.sample_id.clone(),
            audio_ref: s.audio_ref.clone(),
            prompt: rendered.text,
            permutation_seed: rendered.permutation_seed,
        });
    }
    let mut summary = RunSummary {
        requested: pending.len(),
        skipped: manifest.len() - pending.len(),
        ..Default::default()
    };

    let mut out = OpenOptions::new().create(true).append(true).open(run_file)?;
    if pending.is_empty() {
        return Ok(summary);
    }

    let semaphore = Arc::new(Semaphore::new(spec.concurrency.max(1)));
    let (tx, mut rx) = mpsc::unbounded_channel::<Outcome>();
    for (idx, p) in pending.iter().enumerate() {
        let (tx, semaphore, client) = (tx.clone(), semaphore.clone(), client.clone());
        let (id, prompt, audio) = (p.sample_id.clone(), p.prompt.clone(), p.audio_ref.clone());
        tokio::spawn(async move {
            let Ok(_permit) = semaphore.acquire_owned().await else {
                return;
            };
            let result = client.complete(&id, &prompt, &audio).await;
            let _ = tx.send((idx, result, now_ms()));
        });
    }
    drop(tx);

    let mut buffer = BTreeMap::new();
    let mut next = 0;
    while let Some((idx, result, ts)) = rx.recv().await {
        buffer.insert(idx, (result, ts));
        while let Some((result, ts)) = buffer.remove(&next) {
            let p = &pending[next];
            next += 1;
            match result {
                Ok(c) => {
                    let record = RunRecord {
                        sample_id: p.sample_id.clone(),
                        alpha: spec.alpha,
                        kind,
                        prompt_text: p.prompt.clone(),
                        permutation_seed: p.permutation_seed,
                        response_text: c.text,
                        endpoint: client.url().to_string(),
                        model: client.config().model.clone(),
                        attempts: c.attempts,
                        timestamp_ms: ts,
                        latency_ms: c.latency_ms,
                    };
                    let mut line = serde_json::to_vec(&record).map_err(std::io::Error::other)?;
                    line.push(b'\n');
                    out.write_all(&line)?;
                    out.flush()?;
                    summary.written += 1;
                }
                Err(e) => {
                    tracing::error!(sample_id = %p.sample_id, "request failed: {e}");
                    summary.failures.push(SampleFailure {
                        sample_id: p.sample_id.clone(),
                        alpha: spec.alpha,
                        kind,
                        error: e.message,
                        attempts: e.attempts,
                        status: e.status,
                    });
                }
            }
        }
    }
    if next < pending.len() {
        return Err(std::io::Error::other(format!("{} request task(s) ended without a result", pending.len() - next)).into());
    }
    out.sync_all()?;
    Ok(summary)
}
