//! Blocking client for OpenAI-compatible `/chat/completions` and `/embeddings`.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, ProviderError, Speaker,
    VisionProvider, VisualQuery, VisualVerdict,
};

pub const ENDPOINT_ENV: &str = "ANOMALAB_ENDPOINT";
pub const MODEL_ENV: &str = "ANOMALAB_MODEL";
pub const API_KEY_ENV: &str = "ANOMALAB_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model: String,
    pub embedding_model: String,
    pub vision_model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_s: u64,
    pub rate_capacity: u32,
    pub rate_per_sec: f64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4-0314".into(),
            embedding_model: "text-embedding-3-small".into(),
            vision_model: "gpt-4o".into(),
            api_key: None,
            timeout_s: 120,
            rate_capacity: 4,
            rate_per_sec: 1.0,
        }
    }
}

impl LiveConfig {
    /// Applies `ANOMALAB_ENDPOINT`, `ANOMALAB_MODEL` and `ANOMALAB_API_KEY` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var(ENDPOINT_ENV) {
            self.endpoint = v;
        }
        if let Ok(v) = std::env::var(MODEL_ENV) {
            self.model = v;
        }
        if let Ok(v) = std::env::var(API_KEY_ENV) {
            self.api_key = Some(v);
        }
        self
    }
}

/// Classic token bucket; `acquire` sleeps until a token is available.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: u32, per_sec: f64) -> Self {
        let capacity = f64::from(capacity.max(1));
        Self { capacity, per_sec, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Takes a token if one is available right now.
    pub fn try_acquire(&self) -> bool {
        let mut s = self.state.lock().expect("token bucket poisoned");
        let now = Instant::now();
        let refill = now.duration_since(s.1).as_secs_f64() * self.per_sec;
        s.0 = (s.0 + refill).min(self.capacity);
        s.1 = now;
        if s.0 >= 1.0 {
            s.0 -= 1.0;
            true
        } else {
            false
        }
    }

    pub fn acquire(&self) {
        while !self.try_acquire() {
            let wait = if self.per_sec > 0.0 { 1.0 / self.per_sec } else { 1.0 };
            std::thread::sleep(Duration::from_secs_f64(wait.min(0.05)));
        }
    }
}

pub struct OpenAiClient {
    config: LiveConfig,
    agent: ureq::Agent,
    bucket: TokenBucket,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

impl OpenAiClient {
    pub fn new(config: LiveConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .build()
            .into();
        let bucket = TokenBucket::new(config.rate_capacity, config.rate_per_sec);
        Self { config, agent, bucket }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        self.bucket.acquire();
        let mut req = self.agent.post(&self.url(path)).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| ProviderError::Malformed(e.to_string()))
    }

    /// Wire body for a chat request.
    pub fn chat_body(&self, request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for m in &request.messages {
            let role = match m.role {
                Speaker::System => "system",
                Speaker::Agent => "assistant",
                Speaker::User => "user",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn completion_text(v: Value) -> Result<String, ProviderError> {
        let parsed: CompletionResponse =
            serde_json::from_value(v).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| ProviderError::Malformed("completion without content".into()))
    }
}

impl ChatProvider for OpenAiClient {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let v = self.post("chat/completions", &self.chat_body(request))?;
        Self::completion_text(v)
    }
}

impl EmbeddingProvider for OpenAiClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("texts must be non-empty".into()));
        }
        let v = self.post(
            "embeddings",
            &json!({"model": self.config.embedding_model, "input": texts}),
        )?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_value(v).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        parsed.data.sort_by_key(|d| d.index);
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let dim = parsed.data[0].embedding.len();
        if parsed.data.iter().any(|d| d.embedding.len() != dim) {
            return Err(ProviderError::Malformed("inconsistent embedding dimensions".into()));
        }
        Ok(parsed.data.into_iter().map(|d| EmbeddingVector { values: d.embedding }).collect())
    }
}

impl VisionProvider for OpenAiClient {
    fn validate_scene_image(&self, query: &VisualQuery) -> Result<VisualVerdict, ProviderError> {
        query.validate()?;
        let text = format!(
            "Task name: {}\nTask description: {}\nAssets in the scene:\n{}\n\
             Is this scene setup consistent with the task? Answer \"yes\" or \"no\" followed by a short reason.",
            query.task_name,
            query.task_description,
            query
                .asset_annotations
                .iter()
                .map(|a| format!("- {a}"))
                .collect::<Vec<_>>()
                .join("\n")
        );
        let content = match &query.image_ref {
            Some(url) => json!([
                {"type": "text", "text": text},
                {"type": "image_url", "image_url": {"url": url}}
            ]),
            None => json!(text),
        };
        let body = json!({
            "model": self.config.vision_model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0.0,
            "max_tokens": 128,
        });
        let answer = Self::completion_text(self.post("chat/completions", &body)?)?;
        let approved = answer.trim_start().to_lowercase().starts_with("yes");
        Ok(VisualVerdict { approved, rationale: answer.trim().to_string() })
    }
}
