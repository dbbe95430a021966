//! External model capabilities: chat completion, text embedding and visual
//! scene validation.
//!
//! Every capability is a trait so pipelines run identically against the
//! live HTTP backend, recorded transcripts, or the deterministic offline
//! backends.

mod hashing;
mod live;
mod offline;
mod replay;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use hashing::{HashingEmbedder, HASHING_DIM};
pub use live::{LiveConfig, OpenAiClient, TokenBucket, API_KEY_ENV, ENDPOINT_ENV, MODEL_ENV};
pub use offline::{HeuristicChat, RuleVision};
pub use replay::{Recorder, ReplayChat, ReplayVision, TranscriptRecord, TranscriptStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider call budget of {cap} exceeded")]
    BudgetExceeded { cap: usize },
    #[error("no recorded response for request digest {digest}")]
    ReplayMiss { digest: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    Agent,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Speaker,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Speaker::User, content: content.into() }
    }

    pub fn agent(content: impl Into<String>) -> Self {
        Self { role: Speaker::Agent, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Sampling defaults used when the configuration does not override them.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            messages: vec![ChatMessage::user(user)],
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Text of the last user message.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Speaker::User)
            .map_or("", |m| m.content.as_str())
    }

    pub fn digest(&self) -> String {
        request_digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Cosine similarity; zero when either vector has zero norm.
    pub fn cosine(&self, other: &Self) -> f64 {
        cosine(&self.values, &other.values)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualVerdict {
    pub approved: bool,
    pub rationale: String,
}

/// Input for a visual validation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualQuery {
    pub task_name: String,
    pub task_description: String,
    pub asset_annotations: Vec<String>,
    /// Object names the composed scene must show.
    #[serde(default)]
    pub required_objects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl VisualQuery {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.task_name.trim().is_empty() || self.task_description.trim().is_empty() {
            return Err(ProviderError::InvalidRequest(
                "task name and description must be non-empty".into(),
            ));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        request_digest(self)
    }
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut v = self.embed(&[text.to_string()])?;
        v.pop().ok_or_else(|| ProviderError::Malformed("empty embedding batch".into()))
    }
}

pub trait VisionProvider: Send + Sync {
    fn validate_scene_image(&self, query: &VisualQuery) -> Result<VisualVerdict, ProviderError>;
}

/// Recursively sorts object keys so the digest ignores field order.
fn canonicalize(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> =
                map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

/// Stable SHA-256 hex digest of a value's canonical JSON serialization.
pub fn request_digest<T: Serialize>(value: &T) -> String {
    let v = canonicalize(serde_json::to_value(value).expect("request serializes"));
    let text = serde_json::to_string(&v).expect("canonical value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub provider: String,
    pub digest: String,
    pub latency_ms: f64,
}

/// Append-only log of provider calls shared by all wrapped providers.
#[derive(Debug, Default)]
pub struct CallLog {
    records: Mutex<Vec<CallRecord>>,
}

impl CallLog {
    pub fn push(&self, provider: &str, digest: String, started: Instant) {
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        self.records
            .lock()
            .expect("call log poisoned")
            .push(CallRecord { provider: provider.to_string(), digest, latency_ms });
    }

    pub fn snapshot(&self) -> Vec<CallRecord> {
        self.records.lock().expect("call log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("call log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Digest over the multiset of (provider, request digest) pairs. Independent
    /// of completion order and of latency, so parallel runs agree.
    pub fn content_digest(&self) -> String {
        let mut keys: Vec<(String, String)> = self
            .snapshot()
            .into_iter()
            .map(|r| (r.provider, r.digest))
            .collect();
        keys.sort();
        request_digest(&keys)
    }
}

/// Chat wrapper enforcing a call cap.
pub struct Budgeted<P> {
    inner: P,
    cap: usize,
    used: AtomicUsize,
}

impl<P> Budgeted<P> {
    pub fn new(inner: P, cap: usize) -> Self {
        Self { inner, cap, used: AtomicUsize::new(0) }
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }
}

impl<P: ChatProvider> ChatProvider for Budgeted<P> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let n = self.used.fetch_add(1, Ordering::SeqCst);
        if n >= self.cap {
            return Err(ProviderError::BudgetExceeded { cap: self.cap });
        }
        self.inner.chat(request)
    }
}

/// Wraps a chat provider and appends every call to a [`CallLog`].
pub struct LoggedChat {
    pub inner: Arc<dyn ChatProvider>,
    pub log: Arc<CallLog>,
}

impl ChatProvider for LoggedChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let t = Instant::now();
        let r = self.inner.chat(request);
        self.log.push("chat", request.digest(), t);
        r
    }
}

pub struct LoggedEmbed {
    pub inner: Arc<dyn EmbeddingProvider>,
    pub log: Arc<CallLog>,
}

impl EmbeddingProvider for LoggedEmbed {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let t = Instant::now();
        let r = self.inner.embed(texts);
        self.log.push("embed", request_digest(&texts), t);
        r
    }
}

pub struct LoggedVision {
    pub inner: Arc<dyn VisionProvider>,
    pub log: Arc<CallLog>,
}

impl VisionProvider for LoggedVision {
    fn validate_scene_image(&self, query: &VisualQuery) -> Result<VisualVerdict, ProviderError> {
        let t = Instant::now();
        let r = self.inner.validate_scene_image(query);
        self.log.push("vision", query.digest(), t);
        r
    }
}

/// The three capabilities a pipeline run uses, all routed through one log.
#[derive(Clone)]
pub struct ProviderSet {
    pub chat: Arc<dyn ChatProvider>,
    pub embed: Arc<dyn EmbeddingProvider>,
    pub vision: Arc<dyn VisionProvider>,
    pub log: Arc<CallLog>,
}

impl ProviderSet {
    pub fn new(
        chat: Arc<dyn ChatProvider>,
        embed: Arc<dyn EmbeddingProvider>,
        vision: Arc<dyn VisionProvider>,
    ) -> Self {
        let log = Arc::new(CallLog::default());
        Self {
            chat: Arc::new(LoggedChat { inner: chat, log: log.clone() }),
            embed: Arc::new(LoggedEmbed { inner: embed, log: log.clone() }),
            vision: Arc::new(LoggedVision { inner: vision, log: log.clone() }),
            log,
        }
    }

    /// Deterministic offline backends: heuristic chat, hashing embedder, rule vision.
    pub fn offline() -> Self {
        Self::new(
            Arc::new(HeuristicChat),
            Arc::new(HashingEmbedder::default()),
            Arc::new(RuleVision),
        )
    }
}

/// Closure-backed chat provider, handy for scripted tests.
pub struct FnChat<F>(pub F);

impl<F> ChatProvider for FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (self.0)(request)
    }
}

pub struct FnVision<F>(pub F);

impl<F> VisionProvider for FnVision<F>
where
    F: Fn(&VisualQuery) -> Result<VisualVerdict, ProviderError> + Send + Sync,
{
    fn validate_scene_image(&self, query: &VisualQuery) -> Result<VisualVerdict, ProviderError> {
        (self.0)(query)
    }
}
