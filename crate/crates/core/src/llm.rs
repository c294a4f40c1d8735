//! Chat-completion and embedding transport: an OpenAI-compatible HTTP client
//! and a deterministic offline mock.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock: {0}")]
    Mock(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Timeout(_) | LlmError::Transport(_) | LlmError::Mock(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            LlmError::Protocol(_) | LlmError::InvalidRequest(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidRequest(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }

    /// Body for `POST /v1/chat/completions`.
    pub fn to_wire(&self) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_output_tokens,
        })
    }
}

/// Which agent a call belongs to. The HTTP transport ignores it; the mock
/// keys scripted replies on it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CallContext {
    pub query_id: String,
    pub round: u32,
    pub player_id: String,
    pub current_document: String,
}

impl CallContext {
    fn keys(&self) -> [String; 2] {
        let short = format!("r{}{}", self.round, self.player_id);
        [format!("{}/{}", self.query_id, short), short]
    }
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest, ctx: &CallContext) -> Result<String, LlmError>;
}

pub trait Embedder: Send + Sync {
    /// One vector per text, all of the same dimension.
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError>;
}

/// Scripted behavior of the mock chat transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockScript {
    /// Returns the caller's current document.
    Echo,
    /// Returns `"<player> round <r> ..."` followed by the current document.
    RoundTag,
    /// Replays responses keyed by `"<query>/r<round><player>"` or `"r<round><player>"`.
    Replay {
        responses: BTreeMap<String, String>,
        #[serde(default)]
        fallback_echo: bool,
    },
    /// Fails the first `times` calls of every (query, round, player), then echoes.
    Fail { times: u32 },
    /// Returns the same text to every call.
    Fixed { text: String },
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript::Echo
    }
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_in_flight() -> usize {
    4
}

fn default_dimension() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransportSpec {
    Mock {
        #[serde(default)]
        script: MockScript,
        #[serde(default = "default_dimension")]
        embedding_dimension: usize,
    },
    Http {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

impl Default for TransportSpec {
    fn default() -> Self {
        TransportSpec::Mock {
            script: MockScript::Echo,
            embedding_dimension: default_dimension(),
        }
    }
}

impl TransportSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self {
            TransportSpec::Mock { embedding_dimension, .. } => {
                if *embedding_dimension == 0 {
                    v.push("transport.embedding_dimension must be ≥ 1".into());
                }
            }
            TransportSpec::Http {
                endpoint,
                max_in_flight,
                ..
            } => {
                if url_host(endpoint).is_none() {
                    v.push(format!("transport.endpoint is not a valid http(s) URL: {endpoint}"));
                }
                if *max_in_flight == 0 {
                    v.push("transport.max_in_flight must be ≥ 1".into());
                }
            }
        }
        v
    }

    pub fn is_offline(&self) -> bool {
        matches!(self, TransportSpec::Mock { .. })
    }
}

fn url_host(endpoint: &str) -> Option<&str> {
    let rest = endpoint
        .strip_prefix("http://")
        .or_else(|| endpoint.strip_prefix("https://"))?;
    let host = rest.split('/').next()?;
    (!host.is_empty() && !host.contains(char::is_whitespace)).then_some(host)
}

pub struct MockTransport {
    script: MockScript,
    dimension: usize,
    calls: Mutex<HashMap<String, u32>>,
}

impl MockTransport {
    pub fn new(script: MockScript) -> Self {
        Self::with_dimension(script, default_dimension())
    }

    pub fn with_dimension(script: MockScript, dimension: usize) -> Self {
        Self {
            script,
            dimension,
            calls: Mutex::new(HashMap::new()),
        }
    }

    /// Deterministic unit vector derived from the text's hash.
    pub fn hash_vector(text: &str, dimension: usize) -> Vec<f64> {
        let digest = Sha256::digest(text.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let raw: Vec<f64> = (0..dimension).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.into_iter().map(|x| x / norm).collect()
    }
}

impl ChatBackend for MockTransport {
    fn chat(&self, req: &ChatRequest, ctx: &CallContext) -> Result<String, LlmError> {
        req.validate()?;
        let [long_key, short_key] = ctx.keys();
        match &self.script {
            MockScript::Echo => Ok(ctx.current_document.clone()),
            MockScript::RoundTag => Ok(format!(
                "{} round {} {}",
                ctx.player_id, ctx.round, ctx.current_document
            )),
            MockScript::Fixed { text } => Ok(text.clone()),
            MockScript::Replay {
                responses,
                fallback_echo,
            } => responses
                .get(&long_key)
                .or_else(|| responses.get(&short_key))
                .cloned()
                .or_else(|| fallback_echo.then(|| ctx.current_document.clone()))
                .ok_or_else(|| LlmError::Protocol(format!("no scripted response for {long_key}"))),
            MockScript::Fail { times } => {
                let mut calls = self.calls.lock().expect("mock call table poisoned");
                let n = calls.entry(long_key.clone()).or_insert(0);
                *n += 1;
                if *n <= *times {
                    Err(LlmError::Mock(format!("scripted failure {n} for {long_key}")))
                } else {
                    Ok(ctx.current_document.clone())
                }
            }
        }
    }
}

impl Embedder for MockTransport {
    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::InvalidRequest("no texts to embed".into()));
        }
        Ok(texts
            .iter()
            .map(|t| Self::hash_vector(t, self.dimension))
            .collect())
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().expect("in-flight counter poisoned");
        while *used >= self.max {
            used = self.freed.wait(used).expect("in-flight counter poisoned");
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        if let Ok(mut used) = self.0.used.lock() {
            *used -= 1;
        }
        self.0.freed.notify_one();
    }
}

pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl HttpTransport {
    pub fn new(
        endpoint: &str,
        timeout: Duration,
        api_key: Option<String>,
        max_in_flight: usize,
    ) -> Result<Self, LlmError> {
        if url_host(endpoint).is_none() {
            return Err(LlmError::InvalidRequest(format!("bad endpoint URL: {endpoint}")));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key,
            client,
            in_flight: InFlight {
                max: max_in_flight.max(1),
                used: Mutex::new(0),
                freed: Condvar::new(),
            },
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let _slot = self.in_flight.acquire();
        let mut request = self
            .client
            .post(format!("{}{path}", self.endpoint))
            .json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout(e.to_string())
            } else {
                LlmError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout(e.to_string())
            } else {
                LlmError::Transport(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(LlmError::Status {
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Protocol(format!("bad JSON: {e}")))
    }
}

impl ChatBackend for HttpTransport {
    fn chat(&self, req: &ChatRequest, _ctx: &CallContext) -> Result<String, LlmError> {
        req.validate()?;
        let value = self.post("/v1/chat/completions", &req.to_wire())?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Protocol("response lacks choices[0].message.content".into()))
    }
}

impl Embedder for HttpTransport {
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::InvalidRequest("no texts to embed".into()));
        }
        let value = self.post("/v1/embeddings", &json!({"model": model, "input": texts}))?;
        parse_embeddings(&value, texts.len())
    }
}

/// Orders `data[]` by `index` and checks count and dimension.
pub fn parse_embeddings(value: &Value, expected: usize) -> Result<Vec<Vec<f64>>, LlmError> {
    let data = value["data"]
        .as_array()
        .ok_or_else(|| LlmError::Protocol("response lacks data[]".into()))?;
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item["index"].as_u64().map_or(pos, |i| i as usize);
        let vector: Vec<f64> = item["embedding"]
            .as_array()
            .ok_or_else(|| LlmError::Protocol("item lacks embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| LlmError::Protocol("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        let slot = slots
            .get_mut(index)
            .ok_or_else(|| LlmError::Protocol(format!("embedding index {index} out of range")))?;
        *slot = Some(vector);
    }
    let vectors: Vec<Vec<f64>> = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| LlmError::Protocol(format!("missing embedding {i}"))))
        .collect::<Result<_, _>>()?;
    let dim = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != dim) || dim == 0 {
        return Err(LlmError::Protocol("embedding dimension mismatch across batch".into()));
    }
    Ok(vectors)
}

pub enum Transport {
    Http(HttpTransport),
    Mock(MockTransport),
}

impl Transport {
    /// Reads the bearer token from the configured environment variable.
    pub fn from_spec(spec: &TransportSpec) -> Result<Self, LlmError> {
        match spec {
            TransportSpec::Mock {
                script,
                embedding_dimension,
            } => Ok(Transport::Mock(MockTransport::with_dimension(
                script.clone(),
                *embedding_dimension,
            ))),
            TransportSpec::Http {
                endpoint,
                timeout_ms,
                api_key_env,
                max_in_flight,
            } => Ok(Transport::Http(HttpTransport::new(
                endpoint,
                Duration::from_millis(*timeout_ms),
                std::env::var(api_key_env).ok(),
                *max_in_flight,
            )?)),
        }
    }
}

impl ChatBackend for Transport {
    fn chat(&self, req: &ChatRequest, ctx: &CallContext) -> Result<String, LlmError> {
        match self {
            Transport::Http(t) => t.chat(req, ctx),
            Transport::Mock(t) => t.chat(req, ctx),
        }
    }
}

impl Embedder for Transport {
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        match self {
            Transport::Http(t) => t.embed(model, texts),
            Transport::Mock(t) => t.embed(model, texts),
        }
    }
}

pub fn chat(req: &ChatRequest, transport: &Transport) -> Result<String, LlmError> {
    transport.chat(req, &CallContext::default())
}

pub fn embed(texts: &[String], model: &str, transport: &Transport) -> Result<Vec<Vec<f64>>, LlmError> {
    transport.embed(model, texts)
}
