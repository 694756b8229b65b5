//! Uniform completion interface over language-model backends.
//!
//! A [`Gateway`] owns a roster of named backends. Each call is checked
//! against the backend's context limit before anything is sent, passes a
//! per-backend semaphore that caps in-flight requests, and is retried with
//! exponential backoff on transport failure.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::estimate_tokens;

/// Which step of the pipeline a request serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Constructor,
    Answerer,
    Feedback,
    Updater,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Constructor => "constructor",
            Role::Answerer => "answerer",
            Role::Feedback => "feedback",
            Role::Updater => "updater",
        }
    }

    /// Answering and editing run greedy; construction and feedback get a
    /// little sampling diversity.
    pub fn default_temperature(self) -> f64 {
        match self {
            Role::Answerer | Role::Updater => 0.0,
            Role::Constructor | Role::Feedback => 0.3,
        }
    }

    pub fn default_max_output_tokens(self) -> u32 {
        match self {
            Role::Answerer | Role::Constructor => 4096,
            Role::Feedback | Role::Updater => 2048,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub role: Role,
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub backend_id: String,
}

impl CompletionRequest {
    /// Request with the role's default sampling settings.
    pub fn new(role: Role, backend_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            role,
            prompt: prompt.into(),
            max_output_tokens: role.default_max_output_tokens(),
            temperature: role.default_temperature(),
            backend_id: backend_id.into(),
        }
    }
}

/// SHA-256 hex digest of a prompt, the key used by mock scripts.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackendConfig {
    pub backend_id: String,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_context_limit")]
    pub context_limit: usize,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    4
}
fn default_context_limit() -> usize {
    crate::corpus::DEFAULT_BUDGET
}
fn default_backoff_ms() -> u64 {
    500
}

impl BackendConfig {
    pub fn new(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            endpoint: String::new(),
            model: String::new(),
            auth_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            parallelism: default_parallelism(),
            context_limit: default_context_limit(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("environment variable `{0}` is not set")]
    AuthMissing(String),
    #[error("mock script has no response for prompt digest {0}")]
    NoScriptedResponse(String),
}

impl BackendError {
    fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("invalid backend config `{backend}`: {message}")]
    InvalidConfig { backend: String, message: String },
    #[error("prompt needs ~{estimated} tokens, over the {limit}-token limit of `{backend}`")]
    ContextLimit {
        backend: String,
        estimated: usize,
        limit: usize,
    },
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("backend `{backend}` failed after {attempts} attempts: {source}")]
    Backend {
        backend: String,
        attempts: u32,
        source: BackendError,
    },
    #[error("cannot load mock script {path}: {message}")]
    Script { path: String, message: String },
}

/// A model endpoint. Implementations perform one attempt per call; retry and
/// concurrency policy live in [`Gateway`].
pub trait Backend: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<F> Backend for F
where
    F: Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self(request)
    }
}

/// Substring rule of a mock script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub contains: String,
    pub response: String,
}

/// Lookup-table backend: exact prompt digests first, then rules in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockBackend {
    by_digest: HashMap<String, String>,
    rules: Vec<MockRule>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, prompt: &str, response: impl Into<String>) -> Self {
        self.by_digest.insert(prompt_digest(prompt), response.into());
        self
    }

    pub fn with_digest(mut self, digest: impl Into<String>, response: impl Into<String>) -> Self {
        self.by_digest.insert(digest.into(), response.into());
        self
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Parses a script: a JSON object mapping prompt digests to responses,
    /// with an optional `"rules"` array of `{role?, contains, response}`.
    pub fn from_script(text: &str) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let obj = value
            .as_object()
            .ok_or_else(|| "script must be a JSON object".to_string())?;
        let mut mock = MockBackend::new();
        for (key, v) in obj {
            if key == "rules" {
                mock.rules = serde_json::from_value(v.clone()).map_err(|e| format!("rules: {e}"))?;
            } else {
                let text = v
                    .as_str()
                    .ok_or_else(|| format!("response for `{key}` must be a string"))?;
                mock.by_digest.insert(key.clone(), text.to_string());
            }
        }
        Ok(mock)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let err = |message: String| GatewayError::Script {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_script(&text).map_err(err)
    }
}

impl Backend for MockBackend {
    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let digest = prompt_digest(&request.prompt);
        if let Some(text) = self.by_digest.get(&digest) {
            return Ok(text.clone());
        }
        self.rules
            .iter()
            .find(|r| r.role.is_none_or(|role| role == request.role) && request.prompt.contains(&r.contains))
            .map(|r| r.response.clone())
            .ok_or(BackendError::NoScriptedResponse(digest))
    }
}

/// OpenAI-style `/chat/completions` client.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::InvalidConfig {
                backend: config.backend_id.clone(),
                message: e.to_string(),
            })?;
        Ok(Self { config, client })
    }

    fn url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

impl Backend for HttpBackend {
    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let key = match &self.config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::AuthMissing(var.clone()))?),
            None => None,
        };
        let body = ChatBody {
            model: &self.config.model,
            messages: vec![ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            max_tokens: request.max_output_tokens,
            temperature: request.temperature,
        };
        let mut builder = self.client.post(self.url()).json(&body);
        if let Some(key) = key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(BackendError::Transport(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| BackendError::Transport(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Transport("response has no message content".into()))
    }
}

/// Counting semaphore capping in-flight requests for one backend.
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.permits.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.freed.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// Per-backend request counters.
#[derive(Debug, Default)]
pub struct Telemetry {
    pub requests: AtomicU64,
    pub attempts: AtomicU64,
    pub retries: AtomicU64,
    pub failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TelemetrySnapshot {
    pub requests: u64,
    pub attempts: u64,
    pub retries: u64,
    pub failures: u64,
}

impl Telemetry {
    pub fn snapshot(&self) -> TelemetrySnapshot {
        TelemetrySnapshot {
            requests: self.requests.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }
}

/// Result of a successful call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub retries: u32,
}

struct Slot {
    config: BackendConfig,
    backend: Arc<dyn Backend>,
    limiter: Semaphore,
    telemetry: Telemetry,
}

/// Named backend roster shared by every pipeline stage.
#[derive(Default)]
pub struct Gateway {
    slots: HashMap<String, Slot>,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        config: BackendConfig,
        backend: Arc<dyn Backend>,
    ) -> Result<(), GatewayError> {
        if config.parallelism == 0 {
            return Err(GatewayError::InvalidConfig {
                backend: config.backend_id.clone(),
                message: "parallelism must be at least 1".into(),
            });
        }
        let slot = Slot {
            limiter: Semaphore::new(config.parallelism),
            telemetry: Telemetry::default(),
            backend,
            config,
        };
        self.slots.insert(slot.config.backend_id.clone(), slot);
        Ok(())
    }

    /// Shorthand for registering a mock under default settings with no backoff.
    pub fn with_mock(mut self, backend_id: &str, backend: impl Backend + 'static) -> Self {
        let mut config = BackendConfig::new(backend_id);
        config.backoff_ms = 0;
        self.register(config, Arc::new(backend))
            .expect("default config is valid");
        self
    }

    pub fn config(&self, backend_id: &str) -> Option<&BackendConfig> {
        self.slots.get(backend_id).map(|s| &s.config)
    }

    pub fn parallelism(&self, backend_id: &str) -> usize {
        self.config(backend_id).map_or(1, |c| c.parallelism)
    }

    pub fn telemetry(&self, backend_id: &str) -> Option<TelemetrySnapshot> {
        self.slots.get(backend_id).map(|s| s.telemetry.snapshot())
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.complete_detailed(request).map(|c| c.text)
    }

    pub fn complete_detailed(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let slot = self
            .slots
            .get(&request.backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(request.backend_id.clone()))?;
        if request.prompt.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let estimated = estimate_tokens(&request.prompt);
        if estimated > slot.config.context_limit {
            return Err(GatewayError::ContextLimit {
                backend: request.backend_id.clone(),
                estimated,
                limit: slot.config.context_limit,
            });
        }
        slot.telemetry.requests.fetch_add(1, Ordering::Relaxed);
        let _permit = slot.limiter.acquire();
        let mut attempt = 0u32;
        loop {
            slot.telemetry.attempts.fetch_add(1, Ordering::Relaxed);
            match slot.backend.send(request) {
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        retries: attempt,
                    })
                }
                Err(e) if e.is_retryable() && attempt < slot.config.max_retries => {
                    log::warn!(
                        "backend {} attempt {} failed: {e}; retrying",
                        request.backend_id,
                        attempt + 1
                    );
                    let delay = slot.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                    attempt += 1;
                    slot.telemetry.retries.fetch_add(1, Ordering::Relaxed);
                }
                Err(source) => {
                    slot.telemetry.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(GatewayError::Backend {
                        backend: request.backend_id.clone(),
                        attempts: attempt + 1,
                        source,
                    });
                }
            }
        }
    }
}
