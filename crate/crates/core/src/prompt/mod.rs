//! Prompt templates, few-shot example blocks and per-sample permutation.

mod permute;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{normalize, LabelSet, TaskKind};
pub use permute::{permute_examples, sample_seed, SplitMix64};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("sample {sample_id:?} is missing {field}")]
    MissingField { sample_id: String, field: &'static str },
    #[error("template for {kind} must contain {placeholder}")]
    MissingPlaceholder { kind: TemplateKind, placeholder: &'static str },
    #[error("few-shot pool has {available} example(s) of {class:?}, {needed} needed")]
    PoolExhausted {
        class: String,
        needed: usize,
        available: usize,
    },
    #[error("sample {0:?} is both an evaluation sample and a few-shot example")]
    PoolOverlap(String),
}

pub type Result<T, E = PromptError> = std::result::Result<T, E>;

pub const SPECIES_LIST: &str = "{species_list}";
pub const AUDIO: &str = "{audio}";
pub const EXAMPLES: &str = "{examples}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Common,
    Scientific,
    Combined,
    #[serde(alias = "closed-set")]
    ClosedSet,
    ZfOriginal,
    ZfReversed,
    ZfNoclass,
    #[serde(alias = "icl")]
    IclK,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 8] = [
        TemplateKind::Common,
        TemplateKind::Scientific,
        TemplateKind::Combined,
        TemplateKind::ClosedSet,
        TemplateKind::ZfOriginal,
        TemplateKind::ZfReversed,
        TemplateKind::ZfNoclass,
        TemplateKind::IclK,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Common => "common",
            TemplateKind::Scientific => "scientific",
            TemplateKind::Combined => "combined",
            TemplateKind::ClosedSet => "closed_set",
            TemplateKind::ZfOriginal => "zf_original",
            TemplateKind::ZfReversed => "zf_reversed",
            TemplateKind::ZfNoclass => "zf_noclass",
            TemplateKind::IclK => "icl_k",
        }
    }

    /// How outputs of this prompt are scored.
    pub fn task_kind(self) -> TaskKind {
        match self {
            TemplateKind::Common => TaskKind::Common,
            TemplateKind::Scientific => TaskKind::Scientific,
            TemplateKind::Combined => TaskKind::Combined,
            TemplateKind::ClosedSet | TemplateKind::IclK => TaskKind::ClosedSet,
            TemplateKind::ZfOriginal | TemplateKind::ZfReversed | TemplateKind::ZfNoclass => TaskKind::BinaryChoice,
        }
    }

    fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateKind::ClosedSet => &[SPECIES_LIST],
            TemplateKind::IclK => &[EXAMPLES, AUDIO],
            _ => &[],
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateKind::Common => "What is the common name for the focal species in the audio?",
            TemplateKind::Scientific => "What is the scientific name for the focal species in the audio?",
            TemplateKind::Combined => {
                "Identify the focal species in the audio and provide its scientific name, \
                 followed by a colon and its common name."
            }
            TemplateKind::ClosedSet => {
                "What is the common name for the focal species in the audio? Output exactly one of: {species_list}"
            }
            TemplateKind::ZfOriginal => "Is there only one bird in the audio, or more? Reply with 'One' or 'More'.",
            TemplateKind::ZfReversed => {
                "Is there more than one bird in the audio, or just one? Reply with 'More' or 'One'."
            }
            TemplateKind::ZfNoclass => "How many birds are there in the audio?",
            TemplateKind::IclK => {
                "Identify the common name for the focal species in the audio.\n\
                 Output exactly one of: {species_list}\n\n{examples}Audio: {audio}\nLabel:"
            }
        }
    }
}

impl std::fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.replace('-', "_");
        TemplateKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || (s == "icl" && *k == TemplateKind::IclK))
            .ok_or_else(|| format!("unknown prompt kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(kind: TemplateKind, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        for &p in kind.required_placeholders() {
            if !body.contains(p) {
                return Err(PromptError::MissingPlaceholder { kind, placeholder: p });
            }
        }
        Ok(PromptTemplate { kind, body })
    }

    pub fn builtin(kind: TemplateKind) -> Self {
        PromptTemplate {
            kind,
            body: kind.builtin_body().to_string(),
        }
    }
}

/// One benchmark item. Audio is an opaque reference, never decoded here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub sample_id: String,
    #[serde(default)]
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub common_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scientific_name: Option<String>,
    #[serde(default)]
    pub audio_ref: String,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub extra_labels: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolItem {
    pub sample_id: String,
    pub audio_ref: String,
    pub label: String,
}

/// Few-shot configuration; `k` examples of every class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub k: usize,
    pub pool: Vec<PoolItem>,
    pub master_seed: u64,
}

impl FewShotSpec {
    /// The first `k` pool items of each class, in label order.
    pub fn select<'a>(&'a self, labels: &LabelSet) -> Result<Vec<&'a PoolItem>> {
        let mut out = Vec::with_capacity(self.k * labels.classes.len());
        for class in &labels.classes {
            let want = normalize(class);
            let found: Vec<&PoolItem> = self
                .pool
                .iter()
                .filter(|p| normalize(&p.label) == want)
                .take(self.k)
                .collect();
            if found.len() < self.k {
                return Err(PromptError::PoolExhausted {
                    class: class.clone(),
                    needed: self.k,
                    available: found.len(),
                });
            }
            out.extend(found);
        }
        Ok(out)
    }

    /// Fails if any pool item shares an id with an evaluation sample.
    pub fn check_disjoint<'a>(&self, eval_ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let pool: std::collections::HashSet<&str> = self.pool.iter().map(|p| p.sample_id.as_str()).collect();
        match eval_ids.into_iter().find(|id| pool.contains(id)) {
            Some(id) => Err(PromptError::PoolOverlap(id.to_string())),
            None => Ok(()),
        }
    }
}

pub fn audio_marker(audio_ref: &str) -> String {
    format!("<Audio>{audio_ref}</Audio>")
}

fn example_block(item: &PoolItem) -> String {
    format!("Audio: {}\nLabel: {}\n\n", audio_marker(&item.audio_ref), item.label)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    /// Seed that ordered the few-shot blocks; 0 when nothing was permuted.
    pub permutation_seed: u64,
}

/// Substitutes placeholders for one sample.
///
/// `{species_list}` joins the classes with ", " in label order. With `k = 0`
/// an in-context prompt falls back to the closed-set template, so the
/// zero-shot prompt is the closed-set prompt byte for byte.
pub fn render_prompt(
    sample: &EvalSample,
    template: &PromptTemplate,
    labels: Option<&LabelSet>,
    fewshot: Option<&FewShotSpec>,
) -> Result<RenderedPrompt> {
    let missing = |field| PromptError::MissingField {
        sample_id: sample.sample_id.clone(),
        field,
    };

    if template.kind == TemplateKind::IclK && fewshot.is_none_or(|f| f.k == 0) {
        let closed = PromptTemplate::builtin(TemplateKind::ClosedSet);
        return render_prompt(sample, &closed, labels, None);
    }

    let mut text = template.body.clone();
    if text.contains(SPECIES_LIST) {
        let labels = labels.ok_or_else(|| missing("a label set"))?;
        text = text.replace(SPECIES_LIST, &labels.classes.join(", "));
    }

    let mut permutation_seed = 0;
    if text.contains(EXAMPLES) {
        let spec = fewshot.ok_or_else(|| missing("a few-shot spec"))?;
        let labels = labels.ok_or_else(|| missing("a label set"))?;
        spec.check_disjoint([sample.sample_id.as_str()])?;
        let blocks: Vec<String> = spec.select(labels)?.into_iter().map(example_block).collect();
        permutation_seed = sample_seed(spec.master_seed, &sample.sample_id);
        let ordered = permute_examples(&blocks, &sample.sample_id, spec.master_seed);
        text = text.replace(EXAMPLES, &ordered.concat());
    }

    if text.contains(AUDIO) {
        if sample.audio_ref.is_empty() {
            return Err(missing("audio_ref"));
        }
        text = text.replace(AUDIO, &audio_marker(&sample.audio_ref));
    }

    Ok(RenderedPrompt { text, permutation_seed })
}
