//! Chat sessions with an LLM provider and a deterministic record/replay layer.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    RawGeneration,
    RightCode,
    ViolationCode,
    Refinement,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] =
        [TaskKind::RawGeneration, TaskKind::RightCode, TaskKind::ViolationCode, TaskKind::Refinement];

    /// Per-task sampling temperature: 0, 1, 0, 1.
    pub fn default_temperature(self) -> f32 {
        match self {
            TaskKind::RawGeneration => 0.0,
            TaskKind::RightCode => 1.0,
            TaskKind::ViolationCode => 0.0,
            TaskKind::Refinement => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::RawGeneration => "raw_generation",
            TaskKind::RightCode => "right_code",
            TaskKind::ViolationCode => "violation_code",
            TaskKind::Refinement => "refinement",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub task: TaskKind,
    /// Budget scope, normally the api name.
    pub scope: String,
    messages: Vec<Message>,
    pub temperature: f32,
}

impl ChatSession {
    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// Set the system message. Only allowed before the first turn.
    pub fn set_system(&mut self, text: &str) {
        if self.messages.is_empty() && !text.is_empty() {
            self.messages.push(Message { role: Role::System, content: text.to_string() });
        }
    }

    pub fn last_assistant(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::Assistant).map(|m| m.content.as_str())
    }

    #[cfg(test)]
    pub(crate) fn for_test(task: TaskKind) -> Self {
        ChatSession {
            session_id: "test".into(),
            task,
            scope: "test".into(),
            messages: Vec::new(),
            temperature: task.default_temperature(),
        }
    }

    #[cfg(test)]
    pub(crate) fn push_for_test(&mut self, role: Role, content: &str) {
        self.messages.push(Message { role, content: content.to_string() });
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("provider error: {0}")]
    Provider(String),
    #[error("request budget of {cap} exhausted for `{scope}`")]
    BudgetExceeded { scope: String, cap: usize },
    #[error("replay miss: no recorded response for request {hash} ({task})")]
    ReplayMiss { hash: String, task: &'static str },
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("transcript {path}: {message}")]
    Transcript { path: String, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

pub struct ChatRequest<'a> {
    pub task: TaskKind,
    pub temperature: f32,
    pub messages: &'a [Message],
    pub hash: String,
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<Usage>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError>;
    /// "live", "replay", "scripted", ...
    fn kind(&self) -> &'static str;
}

/// Replay key: SHA-256 over the task and the full message array.
pub fn request_hash(task: TaskKind, messages: &[Message]) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        task: TaskKind,
        messages: &'a [Message],
    }
    let bytes = serde_json::to_vec(&Key { task, messages }).expect("messages serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Counting semaphore bounding concurrent provider calls.
struct Limiter {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter { permits: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GatewayConfig {
    #[serde(default = "default_cap")]
    pub request_cap_per_api: usize,
    #[serde(default = "default_concurrency")]
    pub max_concurrent_requests: usize,
    /// Per-task overrides keyed by `TaskKind::as_str()`.
    #[serde(default)]
    pub temperature: BTreeMap<String, f32>,
}

fn default_cap() -> usize {
    50
}

fn default_concurrency() -> usize {
    4
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            request_cap_per_api: default_cap(),
            max_concurrent_requests: default_concurrency(),
            temperature: BTreeMap::new(),
        }
    }
}

/// What a scope has consumed so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeUsage {
    pub requests: usize,
    pub usage: Usage,
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    config: GatewayConfig,
    scopes: Mutex<HashMap<String, ScopeUsage>>,
    limiter: Limiter,
    next_session: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, config: GatewayConfig) -> Self {
        let limiter = Limiter::new(config.max_concurrent_requests);
        Gateway { backend, config, scopes: Mutex::new(HashMap::new()), limiter, next_session: AtomicU64::new(1) }
    }

    pub fn backend_kind(&self) -> &'static str {
        self.backend.kind()
    }

    pub fn temperature(&self, task: TaskKind) -> f32 {
        self.config.temperature.get(task.as_str()).copied().unwrap_or_else(|| task.default_temperature())
    }

    /// Zero-shot session: no exemplar turns are seeded.
    pub fn open_session(&self, task: TaskKind, scope: &str) -> ChatSession {
        let n = self.next_session.fetch_add(1, Ordering::Relaxed);
        ChatSession {
            session_id: format!("{scope}/{}-{n}", task.as_str()),
            task,
            scope: scope.to_string(),
            messages: Vec::new(),
            temperature: self.temperature(task),
        }
    }

    /// Append a user turn, obtain the assistant reply and append it.
    /// On error the session is left unchanged.
    pub fn send(&self, session: &mut ChatSession, user_text: &str) -> Result<String, LlmError> {
        if user_text.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        {
            let mut scopes = self.scopes.lock().unwrap();
            let entry = scopes.entry(session.scope.clone()).or_default();
            if entry.requests >= self.config.request_cap_per_api {
                return Err(LlmError::BudgetExceeded {
                    scope: session.scope.clone(),
                    cap: self.config.request_cap_per_api,
                });
            }
            entry.requests += 1;
        }
        let mut messages = session.messages.clone();
        messages.push(Message { role: Role::User, content: user_text.to_string() });
        let hash = request_hash(session.task, &messages);
        let response = {
            let _permit = self.limiter.acquire();
            self.backend.complete(&ChatRequest {
                task: session.task,
                temperature: session.temperature,
                messages: &messages,
                hash,
            })?
        };
        if let Some(u) = response.usage {
            let mut scopes = self.scopes.lock().unwrap();
            scopes.entry(session.scope.clone()).or_default().usage += u;
        }
        messages.push(Message { role: Role::Assistant, content: response.text.clone() });
        session.messages = messages;
        Ok(response.text)
    }

    pub fn scope_usage(&self, scope: &str) -> ScopeUsage {
        self.scopes.lock().unwrap().get(scope).copied().unwrap_or_default()
    }
}

/// First line of a transcript file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub transcript_version: u32,
    pub provider: String,
    pub model: String,
    pub recorded_at: String,
}

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub request_hash: String,
    pub task: TaskKind,
    pub temperature: f32,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let terr = |message: String| LlmError::Transcript { path: path.display().to_string(), message };
        let file = File::open(path).map_err(|e| terr(e.to_string()))?;
        let mut lines = BufReader::new(file).lines();
        let header_line =
            lines.next().ok_or_else(|| terr("empty transcript".into()))?.map_err(|e| terr(e.to_string()))?;
        let header: TranscriptHeader = serde_json::from_str(&header_line).map_err(|e| terr(format!("header: {e}")))?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| terr(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TranscriptRecord =
                serde_json::from_str(&line).map_err(|e| terr(format!("line {}: {e}", i + 2)))?;
            records.push(rec);
        }
        Ok(Transcript { header, records })
    }
}

/// Serves recorded responses. Requests with the same hash are answered in
/// recording order.
pub struct ReplayBackend {
    queues: Mutex<HashMap<String, VecDeque<TranscriptRecord>>>,
    pub header: TranscriptHeader,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript) -> Self {
        let mut queues: HashMap<String, VecDeque<TranscriptRecord>> = HashMap::new();
        for rec in transcript.records {
            queues.entry(rec.request_hash.clone()).or_default().push_back(rec);
        }
        ReplayBackend { queues: Mutex::new(queues), header: transcript.header }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Transcript::load(path).map(Self::new)
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
        let mut queues = self.queues.lock().unwrap();
        let rec = queues
            .get_mut(&request.hash)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| LlmError::ReplayMiss { hash: request.hash.clone(), task: request.task.as_str() })?;
        Ok(ChatResponse { text: rec.response_text, usage: rec.usage })
    }

    fn kind(&self) -> &'static str {
        "replay"
    }
}

/// Wraps another backend and appends every exchange to a transcript file.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    out: Mutex<File>,
    records: Mutex<Vec<TranscriptRecord>>,
}

impl RecordingBackend {
    pub fn create(inner: Arc<dyn ChatBackend>, path: &Path, header: &TranscriptHeader) -> Result<Self, LlmError> {
        let terr =
            |e: std::io::Error| LlmError::Transcript { path: path.display().to_string(), message: e.to_string() };
        let mut file = OpenOptions::new().create(true).write(true).truncate(true).open(path).map_err(terr)?;
        let line = serde_json::to_string(header).expect("header serializes");
        writeln!(file, "{line}").map_err(terr)?;
        Ok(RecordingBackend { inner, out: Mutex::new(file), records: Mutex::new(Vec::new()) })
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.records.lock().unwrap().clone()
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
        let response = self.inner.complete(request)?;
        let rec = TranscriptRecord {
            request_hash: request.hash.clone(),
            task: request.task,
            temperature: request.temperature,
            response_text: response.text.clone(),
            usage: response.usage,
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        {
            let mut out = self.out.lock().unwrap();
            writeln!(out, "{line}").map_err(|e| LlmError::Provider(e.to_string()))?;
            out.flush().map_err(|e| LlmError::Provider(e.to_string()))?;
        }
        self.records.lock().unwrap().push(rec);
        Ok(response)
    }

    fn kind(&self) -> &'static str {
        self.inner.kind()
    }
}

type Responder = dyn Fn(TaskKind, &[Message]) -> Option<String> + Send + Sync;

/// Computes responses from the request. Used to author transcripts and in tests.
pub struct ScriptedBackend {
    responder: Box<Responder>,
}

impl ScriptedBackend {
    pub fn new(f: impl Fn(TaskKind, &[Message]) -> Option<String> + Send + Sync + 'static) -> Self {
        ScriptedBackend { responder: Box::new(f) }
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
        (self.responder)(request.task, request.messages)
            .map(|text| ChatResponse { text, usage: None })
            .ok_or_else(|| LlmError::Provider(format!("script has no answer for {}", request.hash)))
    }

    fn kind(&self) -> &'static str {
        "scripted"
    }
}

/// Provider settings for the HTTP backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    /// Environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_sec: u64,
}

fn default_model() -> String {
    "gpt-3.5-turbo-0613".into()
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1/chat/completions".into()
}

fn default_key_env() -> String {
    "APSRGEN_API_KEY".into()
}

fn default_retries() -> u32 {
    3
}

fn default_request_timeout() -> u64 {
    120
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            model: default_model(),
            endpoint: default_endpoint(),
            api_key_env: default_key_env(),
            max_retries: default_retries(),
            request_timeout_sec: default_request_timeout(),
        }
    }
}

/// Chat-completion style HTTP backend.
pub struct LiveBackend {
    client: reqwest::blocking::Client,
    config: ProviderConfig,
    api_key: String,
}

impl LiveBackend {
    pub fn new(config: ProviderConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| LlmError::Provider(format!("environment variable {} is not set", config.api_key_env)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_sec))
            .build()
            .map_err(|e| LlmError::Provider(e.to_string()))?;
        Ok(LiveBackend { client, config, api_key })
    }

    fn attempt(&self, request: &ChatRequest<'_>) -> Result<ChatResponse, (bool, String)> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        let resp = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let transient = status.as_u16() == 429 || status.is_server_error();
            let text = resp.text().unwrap_or_default();
            return Err((transient, format!("HTTP {status}: {text}")));
        }
        let value: serde_json::Value = resp.json().map_err(|e| (false, e.to_string()))?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or((false, "response has no choices[0].message.content".to_string()))?
            .to_string();
        let usage = value.get("usage").map(|u| Usage {
            prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
        });
        Ok(ChatResponse { text, usage })
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<ChatResponse, LlmError> {
        let mut delay = Duration::from_millis(500);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err((transient, msg)) => {
                    log::warn!("provider request failed (attempt {}): {msg}", attempt + 1);
                    last = msg;
                    if !transient {
                        break;
                    }
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
        Err(LlmError::Provider(last))
    }

    fn kind(&self) -> &'static str {
        "live"
    }
}

/// How the CLI chooses a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Live,
    Replay(PathBuf),
    Record(PathBuf),
}

pub fn build_backend(choice: &BackendChoice, provider: &ProviderConfig) -> Result<Arc<dyn ChatBackend>, LlmError> {
    Ok(match choice {
        BackendChoice::Live => Arc::new(LiveBackend::new(provider.clone())?),
        BackendChoice::Replay(path) => Arc::new(ReplayBackend::load(path)?),
        BackendChoice::Record(path) => {
            let live: Arc<dyn ChatBackend> = Arc::new(LiveBackend::new(provider.clone())?);
            let header = TranscriptHeader {
                transcript_version: 1,
                provider: "live".into(),
                model: provider.model.clone(),
                recorded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            };
            Arc::new(RecordingBackend::create(live, path, &header)?)
        }
    })
}
