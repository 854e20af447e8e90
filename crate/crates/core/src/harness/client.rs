use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

pub const DEFAULT_PATH: &str = "/v1/chat/completions";
pub const SAMPLE_ID_HEADER: &str = "x-sample-id";

/// Exponential backoff: `initial_ms * multiplier^n`, capped at `max_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_ms: u64,
    pub multiplier: f64,
    pub max_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_ms: 250,
            multiplier: 2.0,
            max_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `n` (0-based).
    pub fn backoff(&self, n: u32) -> Duration {
        let ms = self.initial_ms as f64 * self.multiplier.powi(n as i32);
        Duration::from_millis(ms.min(self.max_ms as f64) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub path: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    /// Sends the sample's audio reference as an `audio_ref` body field.
    pub send_audio_ref: bool,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000".into(),
            path: DEFAULT_PATH.into(),
            model: "default".into(),
            temperature: 0.0,
            max_tokens: 64,
            timeout_ms: 120_000,
            send_audio_ref: true,
            api_key: None,
            retry: RetryPolicy::default(),
        }
    }
}

impl EndpointConfig {
    pub fn url(&self) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), self.path.trim_start_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message} (after {attempts} attempt(s))")]
pub struct EndpointError {
    pub message: String,
    pub attempts: u32,
    pub status: Option<u16>,
}

enum Failure {
    Transient(String, Option<u16>),
    Fatal(String, Option<u16>),
}

/// Chat-completions client. Cheap to clone.
#[derive(Debug, Clone)]
pub struct ChatClient {
    http: reqwest::Client,
    config: EndpointConfig,
    url: String,
}

impl ChatClient {
    pub fn new(config: EndpointConfig) -> Result<Self, reqwest::Error> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()?;
        let url = config.url();
        Ok(ChatClient { http, config, url })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn request_body(&self, prompt: &str, audio_ref: &str) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        if self.config.send_audio_ref && !audio_ref.is_empty() {
            body["audio_ref"] = json!(audio_ref);
        }
        body
    }

    /// Sends one prompt, retrying connection errors, timeouts, 429 and 5xx.
    pub async fn complete(&self, sample_id: &str, prompt: &str, audio_ref: &str) -> Result<Completion, EndpointError> {
        let body = self.request_body(prompt, audio_ref);
        let started = Instant::now();
        let policy = &self.config.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(sample_id, &body).await {
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        attempts: attempt,
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(Failure::Transient(msg, _)) if attempt <= policy.max_retries => {
                    let delay = policy.backoff(attempt - 1);
                    tracing::warn!(sample_id, attempt, ?delay, "transient endpoint error, retrying: {msg}");
                    tokio::time::sleep(delay).await;
                }
                Err(Failure::Transient(message, status)) | Err(Failure::Fatal(message, status)) => {
                    return Err(EndpointError {
                        message,
                        attempts: attempt,
                        status,
                    })
                }
            }
        }
    }

    async fn attempt(&self, sample_id: &str, body: &serde_json::Value) -> Result<String, Failure> {
        tracing::debug!(sample_id, request = %body, "chat request");
        let mut req = self.http.post(&self.url).header(SAMPLE_ID_HEADER, sample_id).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| Failure::Transient(e.to_string(), None))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| Failure::Transient(e.to_string(), Some(status.as_u16())))?;
        tracing::debug!(sample_id, status = status.as_u16(), response = %text, "chat response");
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Transient(format!("HTTP {status}"), Some(status.as_u16())));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(format!("HTTP {status}: {text}"), Some(status.as_u16())));
        }
        parse_content(&text).ok_or_else(|| Failure::Fatal(format!("no choices[0].message.content in {text:?}"), Some(status.as_u16())))
    }
}

fn parse_content(body: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    let choice = v.get("choices")?.get(0)?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(|c| c.as_str())
        .map(str::to_string)
}
