//! A local chat-completions endpoint answering from a closure.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use crate::harness::{DEFAULT_PATH, SAMPLE_ID_HEADER};

#[derive(Debug, Clone, PartialEq)]
pub struct StubRequest {
    pub sample_id: Option<String>,
    pub model: String,
    pub prompt: String,
    pub audio_ref: Option<String>,
    /// 1 for the first request seen for this (model, sample_id).
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StubReply {
    Text(String),
    Delayed(String, Duration),
    Status(u16),
}

pub type Responder = Arc<dyn Fn(&StubRequest) -> StubReply + Send + Sync>;

struct Inner {
    responder: Responder,
    log: Mutex<Vec<StubRequest>>,
    attempts: Mutex<HashMap<(String, String), u32>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

pub struct StubServer {
    addr: SocketAddr,
    inner: Arc<Inner>,
    task: tokio::task::JoinHandle<()>,
}

impl StubServer {
    /// Binds an ephemeral localhost port and serves until dropped.
    pub async fn start(responder: Responder) -> std::io::Result<Self> {
        let inner = Arc::new(Inner {
            responder,
            log: Mutex::new(Vec::new()),
            attempts: Mutex::new(HashMap::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        });
        let app = Router::new().route(DEFAULT_PATH, post(handle)).with_state(inner.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        Ok(StubServer { addr, inner, task })
    }

    /// Answers `outputs[(model, sample_id)]`, or 404 when absent.
    pub async fn canned(outputs: HashMap<(String, String), String>) -> std::io::Result<Self> {
        Self::start(Arc::new(move |req: &StubRequest| {
            let key = (req.model.clone(), req.sample_id.clone().unwrap_or_default());
            match outputs.get(&key) {
                Some(text) => StubReply::Text(text.clone()),
                None => StubReply::Status(404),
            }
        }))
        .await
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<StubRequest> {
        self.inner.log.lock().expect("log lock").clone()
    }

    pub fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn handle(State(inner): State<Arc<Inner>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let now = inner.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    inner.max_in_flight.fetch_max(now, Ordering::SeqCst);

    let sample_id = headers
        .get(SAMPLE_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let model = body["model"].as_str().unwrap_or_default().to_string();
    let attempt = {
        let mut attempts = inner.attempts.lock().expect("attempt lock");
        let n = attempts
            .entry((model.clone(), sample_id.clone().unwrap_or_default()))
            .or_insert(0);
        *n += 1;
        *n
    };
    let req = StubRequest {
        sample_id,
        model,
        prompt: body["messages"][0]["content"].as_str().unwrap_or_default().to_string(),
        audio_ref: body["audio_ref"].as_str().map(str::to_string),
        attempt,
    };
    inner.log.lock().expect("log lock").push(req.clone());

    let reply = (inner.responder)(&req);
    let response = match reply {
        StubReply::Text(text) => completion(&text),
        StubReply::Delayed(text, delay) => {
            tokio::time::sleep(delay).await;
            completion(&text)
        }
        StubReply::Status(code) => StatusCode::from_u16(code)
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
            .into_response(),
    };
    inner.in_flight.fetch_sub(1, Ordering::SeqCst);
    response
}

fn completion(text: &str) -> Response {
    Json(json!({
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    }))
    .into_response()
}
