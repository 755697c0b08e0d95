//! Chat-completion client.
//!
//! Requests go through a [`Backend`]: live HTTP for OpenAI/Mistral style
//! endpoints, replay from a recorded transcript, or an in-process mock. The
//! client enforces per-endpoint request and token limits over a 60 second
//! sliding window, retries transient failures with exponential backoff and
//! appends every completed exchange to a JSON-lines transcript.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::{estimate_tokens, ChatMessage, FewShotPrompt};

pub const OPENAI_KEY_ENV: &str = "MORPHOFORGE_OPENAI_KEY";
pub const MISTRAL_KEY_ENV: &str = "MORPHOFORGE_MISTRAL_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Permanent { status: u16, body: String },
    #[error("request failed after {attempts} attempts: {last}")]
    Transient { attempts: u32, last: String },
    #[error("no recorded response for prompt digest {digest}")]
    ReplayMiss { digest: String },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("transcript error: {0}")]
    Transcript(String),
}

/// Outcome of a single backend attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    /// HTTP error status with the response body.
    Http { status: u16, body: String },
    /// Connection, timeout or decoding failure.
    Network(String),
    ReplayMiss { digest: String },
}

impl BackendError {
    fn is_transient(&self) -> bool {
        match self {
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            BackendError::Network(_) => true,
            BackendError::ReplayMiss { .. } => false,
        }
    }

    fn describe(&self) -> String {
        match self {
            BackendError::Http { status, body } => format!("HTTP {status}: {body}"),
            BackendError::Network(m) => m.clone(),
            BackendError::ReplayMiss { digest } => format!("replay miss {digest}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vendor {
    OpenAi,
    Mistral,
}

impl Vendor {
    pub fn default_base_url(self) -> &'static str {
        match self {
            Vendor::OpenAi => "https://api.openai.com/v1",
            Vendor::Mistral => "https://api.mistral.ai/v1",
        }
    }

    pub fn key_env(self) -> &'static str {
        match self {
            Vendor::OpenAi => OPENAI_KEY_ENV,
            Vendor::Mistral => MISTRAL_KEY_ENV,
        }
    }
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub vendor: Vendor,
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub requests_per_minute: u32,
    /// Thousands of tokens per minute.
    pub tokens_per_minute_k: u32,
    pub timeout_secs: u64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

/// Preset ids accepted by [`EndpointConfig::preset`].
pub const PRESETS: [&str; 6] = [
    "mistral-medium",
    "mistral-small",
    "mistral-tiny",
    "gpt-3.5-turbo",
    "gpt-4",
    "gpt-4-turbo",
];

impl EndpointConfig {
    pub fn new(vendor: Vendor, model_name: &str, requests_per_minute: u32, tokens_per_minute_k: u32) -> Self {
        EndpointConfig {
            vendor,
            base_url: vendor.default_base_url().to_string(),
            model_name: model_name.to_string(),
            api_key_env: vendor.key_env().to_string(),
            requests_per_minute,
            tokens_per_minute_k,
            timeout_secs: 120,
            temperature: 0.0,
            max_tokens: None,
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    /// Published limits of the six benchmarked models.
    pub fn preset(id: &str) -> Option<EndpointConfig> {
        let (vendor, model, rpm, tpm) = match id {
            "mistral-medium" => (Vendor::Mistral, "mistral-medium", 120, 2000),
            "mistral-small" => (Vendor::Mistral, "mistral-small", 120, 2000),
            "mistral-tiny" => (Vendor::Mistral, "mistral-tiny", 120, 2000),
            "gpt-3.5-turbo" => (Vendor::OpenAi, "gpt-3.5-turbo-1106", 500, 60),
            "gpt-4" => (Vendor::OpenAi, "gpt-4-0613", 500, 10),
            "gpt-4-turbo" => (Vendor::OpenAi, "gpt-4-0125-preview", 500, 150),
            _ => return None,
        };
        Some(EndpointConfig::new(vendor, model, rpm, tpm))
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.requests_per_minute == 0 || self.tokens_per_minute_k == 0 {
            return Err(LlmError::Config("rate limits must be > 0".into()));
        }
        if self.timeout_secs == 0 {
            return Err(LlmError::Config("timeout must be > 0".into()));
        }
        Ok(())
    }

    pub fn tokens_per_minute(&self) -> u64 {
        self.tokens_per_minute_k as u64 * 1000
    }
}

// ---------------------------------------------------------------------------
// Clocks

pub trait Clock: Send + Sync {
    /// Monotonic time since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
    /// Wall-clock milliseconds since the Unix epoch, for transcripts.
    fn unix_millis(&self) -> u64;
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }

    fn unix_millis(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Clock that only moves when slept on.
#[derive(Default)]
pub struct SimulatedClock {
    now: Mutex<Duration>,
}

impl SimulatedClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d)
    }

    fn unix_millis(&self) -> u64 {
        self.now().as_millis() as u64
    }
}

// ---------------------------------------------------------------------------
// Rate limiting

pub const WINDOW: Duration = Duration::from_secs(60);

/// Log of admitted requests over the last [`WINDOW`]. A request is admitted
/// only if the window then holds at most `requests` requests and `tokens`
/// tokens; a single request larger than the token budget is admitted into an
/// empty window.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    requests: u32,
    tokens: u64,
    log: VecDeque<(Duration, u64)>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32, tokens_per_minute: u64) -> Self {
        RateLimiter {
            requests: requests_per_minute,
            tokens: tokens_per_minute,
            log: VecDeque::new(),
        }
    }

    fn evict(&mut self, now: Duration) {
        while self.log.front().is_some_and(|&(t, _)| now.saturating_sub(t) >= WINDOW) {
            self.log.pop_front();
        }
    }

    /// How long to wait before a request of `tokens` could be admitted.
    pub fn wait_time(&mut self, now: Duration, tokens: u64) -> Duration {
        self.evict(now);
        let expiry = |i: usize| self.log[i].0 + WINDOW - now;
        let mut wait = Duration::ZERO;
        if self.log.len() >= self.requests as usize {
            wait = wait.max(expiry(self.log.len() - self.requests as usize));
        }
        let mut used: u64 = self.log.iter().map(|e| e.1).sum();
        if used + tokens > self.tokens && !self.log.is_empty() {
            // drop oldest entries until the request fits or the window empties
            let mut i = 0;
            while i < self.log.len() && used + tokens > self.tokens {
                used -= self.log[i].1;
                i += 1;
            }
            wait = wait.max(expiry(i - 1));
        }
        wait
    }

    /// Blocks on `clock` until the request fits, records it and returns the
    /// time waited.
    pub fn acquire(&mut self, clock: &dyn Clock, tokens: u64) -> Duration {
        let start = clock.now();
        loop {
            let now = clock.now();
            let wait = self.wait_time(now, tokens);
            if wait.is_zero() {
                self.log.push_back((now, tokens));
                return now - start;
            }
            clock.sleep(wait);
        }
    }
}

// ---------------------------------------------------------------------------
// Backends

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn digest(&self) -> String {
        prompt_digest(&self.model, &self.messages)
    }
}

/// Hex SHA-256 of the canonical JSON `{"model":…,"messages":[{"role","content"}…]}`.
pub fn prompt_digest(model: &str, messages: &[ChatMessage]) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        model: &'a str,
        messages: &'a [ChatMessage],
    }
    let json = serde_json::to_string(&Canonical { model, messages }).expect("serializable");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: String,
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_config(cfg: &EndpointConfig) -> Result<HttpBackend, LlmError> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::Config(format!("environment variable {} is not set", cfg.api_key_env)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpBackend {
            client,
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| BackendError::Network(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| BackendError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                body,
            });
        }
        let v: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| BackendError::Network(format!("bad JSON: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Network("response has no choices[0].message.content".into()))
    }
}

/// Answers by prompt digest from a recorded transcript.
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(transcript: &Transcript) -> Result<ReplayBackend, LlmError> {
        let mut responses = HashMap::new();
        for e in &transcript.entries {
            if let Some(prev) = responses.insert(e.digest.clone(), e.response.clone()) {
                if prev != e.response {
                    return Err(LlmError::Transcript(format!(
                        "digest {} recorded with different responses",
                        e.digest
                    )));
                }
            }
        }
        Ok(ReplayBackend { responses })
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let digest = request.digest();
        self.responses
            .get(&digest)
            .cloned()
            .ok_or(BackendError::ReplayMiss { digest })
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// In-process backend driven by a closure.
pub struct MockBackend {
    respond: Box<Responder>,
}

impl MockBackend {
    pub fn new(f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        MockBackend { respond: Box::new(f) }
    }

    /// Canned responses by digest; unknown digests are replay misses.
    pub fn from_map(map: HashMap<String, String>) -> Self {
        MockBackend::new(move |r| {
            let digest = r.digest();
            map.get(&digest).cloned().ok_or(BackendError::ReplayMiss { digest })
        })
    }

    /// Answers every prompt with a shape set derived from its digest.
    pub fn hashed(seed: u64) -> Self {
        use crate::data::ShapeCategory;
        MockBackend::new(move |r| {
            let d = Sha256::digest(format!("{seed}:{}", r.digest()).as_bytes());
            let mask = (d[0] % 31) + 1;
            let names: Vec<&str> = ShapeCategory::ALL
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, s)| s.name())
                .collect();
            Ok(format!("Answer: '{}'", names.join(", ")))
        })
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (self.respond)(request)
    }
}

// ---------------------------------------------------------------------------
// Transcripts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub response: String,
    pub latency_ms: u64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn load(path: impl AsRef<Path>) -> Result<Transcript, LlmError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Transcript(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| LlmError::Transcript(format!("{} line {}: {e}", path.display(), i + 1)))?;
            entries.push(e);
        }
        Ok(Transcript { entries })
    }
}

/// Append-only JSON-lines sink; each entry is written and flushed under a
/// lock so concurrent appends never interleave.
pub struct TranscriptWriter {
    file: Mutex<File>,
}

impl TranscriptWriter {
    pub fn append_to(path: impl AsRef<Path>) -> Result<TranscriptWriter, LlmError> {
        let path = path.as_ref();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        Ok(TranscriptWriter { file: Mutex::new(file) })
    }

    pub fn append(&self, entry: &TranscriptEntry) -> Result<(), LlmError> {
        let mut line = serde_json::to_string(entry).map_err(|e| LlmError::Transcript(e.to_string()))?;
        line.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| LlmError::Transcript(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Client

pub struct LlmClient {
    config: EndpointConfig,
    backend: Box<dyn Backend>,
    clock: Arc<dyn Clock>,
    limiter: Mutex<RateLimiter>,
    transcript: Option<Arc<TranscriptWriter>>,
    recorded: Mutex<Vec<TranscriptEntry>>,
}

impl LlmClient {
    pub fn new(config: EndpointConfig, backend: Box<dyn Backend>, clock: Arc<dyn Clock>) -> Result<Self, LlmError> {
        config.validate()?;
        let limiter = RateLimiter::new(config.requests_per_minute, config.tokens_per_minute());
        Ok(LlmClient {
            config,
            backend,
            clock,
            limiter: Mutex::new(limiter),
            transcript: None,
            recorded: Mutex::new(Vec::new()),
        })
    }

    /// Live client on the wall clock.
    pub fn http(config: EndpointConfig) -> Result<Self, LlmError> {
        let backend = HttpBackend::from_config(&config)?;
        LlmClient::new(config, Box::new(backend), Arc::new(SystemClock::default()))
    }

    pub fn with_transcript(mut self, writer: Arc<TranscriptWriter>) -> Self {
        self.transcript = Some(writer);
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Entries completed by this client so far.
    pub fn transcript(&self) -> Transcript {
        Transcript {
            entries: self.recorded.lock().unwrap().clone(),
        }
    }

    pub fn chat_complete(&self, prompt: &FewShotPrompt) -> Result<String, LlmError> {
        self.complete_messages(prompt.messages())
    }

    pub fn complete_messages(&self, messages: Vec<ChatMessage>) -> Result<String, LlmError> {
        if messages.iter().all(|m| m.content.trim().is_empty()) {
            return Err(LlmError::EmptyPrompt);
        }
        let request = ChatRequest {
            model: self.config.model_name.clone(),
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let tokens = request
            .messages
            .iter()
            .map(|m| estimate_tokens(&m.content) as u64)
            .sum();
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(20));
                log::warn!("retrying after {backoff} ms: {last}");
                self.clock.sleep(Duration::from_millis(backoff));
            }
            self.limiter.lock().unwrap().acquire(self.clock.as_ref(), tokens);
            let started = self.clock.now();
            match self.backend.complete(&request) {
                Ok(response) => {
                    let latency = self.clock.now() - started;
                    self.record(&request, &response, latency)?;
                    return Ok(response);
                }
                Err(BackendError::ReplayMiss { digest }) => return Err(LlmError::ReplayMiss { digest }),
                Err(BackendError::Http { status, body }) if !(status == 429 || status >= 500) => {
                    return Err(LlmError::Permanent { status, body })
                }
                Err(e) => {
                    debug_assert!(e.is_transient());
                    last = e.describe();
                }
            }
        }
        Err(LlmError::Transient { attempts, last })
    }

    fn record(&self, request: &ChatRequest, response: &str, latency: Duration) -> Result<(), LlmError> {
        let entry = TranscriptEntry {
            digest: request.digest(),
            model: request.model.clone(),
            messages: request.messages.clone(),
            response: response.to_string(),
            latency_ms: latency.as_millis() as u64,
            timestamp_ms: self.clock.unix_millis(),
        };
        if let Some(w) = &self.transcript {
            w.append(&entry)?;
        }
        self.recorded.lock().unwrap().push(entry);
        Ok(())
    }
}
