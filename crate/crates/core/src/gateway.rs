//! Provider-agnostic chat-completion client.
//!
//! [`HttpGateway`] speaks the common chat-completions JSON shape with retry,
//! backoff, rate limiting and an on-disk response cache. [`ReplayGateway`]
//! answers from a recorded transcript so that every pipeline stage can run
//! offline and reproducibly.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Observability label; not part of any cache or replay key.
    #[serde(default)]
    pub request_tag: String,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.7,
            max_tokens: 4096,
            request_tag: String::new(),
        }
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.request_tag = tag.into();
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| GatewayError::InvalidRequest("no messages".into()))?;
        if first.role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be a system or user message".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    fn key_material(&self) -> Value {
        json!({
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    /// Content-addressed key over every generation-relevant field. Used by
    /// replay transcripts.
    pub fn content_key(&self) -> String {
        sha256_hex(&self.key_material().to_string())
    }

    /// Cache key: the content key scoped to an endpoint.
    pub fn cache_key(&self, endpoint: &str) -> String {
        let mut material = self.key_material();
        material["endpoint"] = Value::String(endpoint.to_string());
        sha256_hex(&material.to_string())
    }
}

fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider rejected request with status {status}: {body}")]
    Request { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Response(String),
    #[error("replay transcript has no entry for request {key}")]
    ReplayMiss { key: String },
    #[error("replay transcript exhausted after {0} responses")]
    ReplayExhausted(usize),
    #[error("transcript {path}: {message}")]
    Transcript { path: String, message: String },
}

impl GatewayError {
    /// Whether a caller may reasonably try the same request again later.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

/// Anything that can answer a chat request. Handles are shared across worker
/// threads.
pub trait ChatGateway: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError>;

    /// Whether identical requests always get identical answers.
    fn is_deterministic(&self) -> bool {
        false
    }
}

impl<G: ChatGateway + ?Sized> ChatGateway for &G {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        (**self).complete(req)
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

impl<G: ChatGateway + ?Sized> ChatGateway for std::sync::Arc<G> {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        (**self).complete(req)
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Name of the environment variable holding the API key. `None` sends no
    /// credential (local servers).
    pub credential_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_ceiling_ms: u64,
    pub rate_limit_per_minute: u32,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            credential_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 120,
            max_retries: 5,
            backoff_base_ms: 500,
            backoff_ceiling_ms: 30_000,
            rate_limit_per_minute: 60,
            max_in_flight: 4,
            cache_dir: None,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.rate_limit_per_minute == 0 {
            return Err(GatewayError::Config("rate limit must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        if self.backoff_ceiling_ms < self.backoff_base_ms {
            return Err(GatewayError::Config("backoff ceiling below base".into()));
        }
        if let Some(name) = &self.credential_env {
            if name.trim().is_empty() {
                return Err(GatewayError::Config("empty credential variable name".into()));
            }
        }
        Ok(())
    }

    pub fn backoff(&self) -> Backoff {
        Backoff {
            base: Duration::from_millis(self.backoff_base_ms),
            ceiling: Duration::from_millis(self.backoff_ceiling_ms),
        }
    }
}

/// Exponential backoff with jitter in the upper half of each step, capped at
/// the ceiling. Delays never decrease across consecutive attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base: Duration,
    pub ceiling: Duration,
}

impl Backoff {
    /// Delay before retry number `attempt` (0-based) given a uniform draw
    /// `jitter` in `[0, 1)`.
    pub fn delay(&self, attempt: u32, jitter: f64) -> Duration {
        let nominal = self.base.as_secs_f64() * 2f64.powi(attempt.min(62) as i32);
        let jittered = nominal * (0.5 + 0.5 * jitter.clamp(0.0, 1.0));
        Duration::from_secs_f64(jittered.min(self.ceiling.as_secs_f64()))
    }
}

struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(per_minute: u32) -> Self {
        Self {
            interval: Duration::from_secs_f64(60.0 / per_minute as f64),
            next_slot: Mutex::new(None),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut slot = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let start = match *slot {
                Some(t) if t > now => t,
                _ => now,
            };
            *slot = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct InFlightGuard<'a>(&'a InFlight);

impl InFlight {
    fn enter(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightGuard(self)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    content_key: String,
    completion: Completion,
}

/// HTTP chat-completions client.
pub struct HttpGateway {
    cfg: GatewayConfig,
    client: OnceLock<reqwest::blocking::Client>,
    limiter: RateLimiter,
    in_flight: InFlight,
    network_calls: AtomicUsize,
}

enum Attempt {
    Done(Completion),
    Retry(String),
    Fatal(GatewayError),
}

impl HttpGateway {
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        Ok(Self {
            limiter: RateLimiter::new(cfg.rate_limit_per_minute),
            in_flight: InFlight {
                limit: cfg.max_in_flight,
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
            cfg,
            client: OnceLock::new(),
            network_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    /// Number of HTTP requests actually sent (cache hits excluded).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    // The blocking client owns a runtime, so it is built on first use from
    // whatever thread issues the request rather than at construction time.
    fn client(&self) -> Result<&reqwest::blocking::Client, GatewayError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let built = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.cfg.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        Ok(self.client.get_or_init(|| built))
    }

    fn credential(&self) -> Result<Option<String>, GatewayError> {
        match &self.cfg.credential_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| GatewayError::Config(format!("credential variable {var} is not set"))),
        }
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cfg.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn cache_get(&self, key: &str) -> Option<Completion> {
        let path = self.cache_path(key)?;
        let raw = fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&raw) {
            Ok(entry) if entry.key == key => Some(entry.completion),
            Ok(_) | Err(_) => {
                log::warn!("ignoring corrupt cache entry {}", path.display());
                None
            }
        }
    }

    fn cache_put(&self, key: &str, req: &ChatRequest, completion: &Completion) {
        let Some(path) = self.cache_path(key) else { return };
        let entry = CacheEntry {
            key: key.to_string(),
            content_key: req.content_key(),
            completion: completion.clone(),
        };
        let result = (|| -> std::io::Result<()> {
            let dir = path.parent().expect("cache path has a parent");
            fs::create_dir_all(dir)?;
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(serde_json::to_string(&entry)?.as_bytes())?;
            tmp.as_file().sync_all()?;
            tmp.persist(&path).map(|_| ()).map_err(|e| e.error)
        })();
        if let Err(e) = result {
            log::warn!("failed to write cache entry {}: {e}", path.display());
        }
    }

    fn attempt(&self, req: &ChatRequest, credential: Option<&str>) -> Attempt {
        let client = match self.client() {
            Ok(c) => c,
            Err(e) => return Attempt::Fatal(e),
        };
        let body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut builder = client.post(&self.cfg.endpoint).json(&body);
        if let Some(key) = credential {
            builder = builder.bearer_auth(key);
        }
        self.limiter.acquire();
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let resp = match builder.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("send: {}", e.without_url())),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("read body: {}", e.without_url())),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("status {status}"));
        }
        if !status.is_success() {
            return Attempt::Fatal(GatewayError::Request {
                status: status.as_u16(),
                body: text.chars().take(300).collect(),
            });
        }
        match parse_chat_response(&text) {
            Ok(c) => Attempt::Done(c),
            Err(e) => Attempt::Fatal(e),
        }
    }
}

/// Extracts the first choice's text and token usage from a chat-completions
/// response body.
pub fn parse_chat_response(body: &str) -> Result<Completion, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Response(e.to_string()))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Response("missing choices[0].message.content".into()))?;
    let usage = Usage {
        prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: v
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    Ok(Completion { text: text.to_string(), usage })
}

impl ChatGateway for HttpGateway {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let key = req.cache_key(&self.cfg.endpoint);
        if let Some(hit) = self.cache_get(&key) {
            log::debug!("cache hit for {} ({})", req.request_tag, &key[..12]);
            return Ok(hit);
        }
        let credential = self.credential()?;
        let backoff = self.cfg.backoff();
        let _slot = self.in_flight.enter();
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let delay = backoff.delay(attempt - 1, rand::thread_rng().gen());
                log::info!(
                    "retrying {} in {:?} (attempt {}): {last}",
                    req.request_tag,
                    delay,
                    attempt + 1
                );
                std::thread::sleep(delay);
            }
            match self.attempt(req, credential.as_deref()) {
                Attempt::Done(c) => {
                    self.cache_put(&key, req, &c);
                    return Ok(c);
                }
                Attempt::Retry(msg) => last = msg,
                Attempt::Fatal(e) => return Err(e),
            }
        }
        Err(GatewayError::Transport {
            attempts: self.cfg.max_retries + 1,
            message: last,
        })
    }
}

/// One line of a replay transcript. `key` is either a request content key
/// (hex string) or an ordinal position (number).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: Value,
    pub response: String,
}

enum ReplayMode {
    Keyed(HashMap<String, String>),
    Ordinal { responses: Vec<String>, next: AtomicUsize },
}

/// Deterministic stand-in for a model, answering from a transcript.
pub struct ReplayGateway {
    mode: ReplayMode,
    served: AtomicUsize,
}

impl ReplayGateway {
    pub fn keyed(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            mode: ReplayMode::Keyed(entries.into_iter().collect()),
            served: AtomicUsize::new(0),
        }
    }

    pub fn ordinal(responses: Vec<String>) -> Self {
        Self {
            mode: ReplayMode::Ordinal { responses, next: AtomicUsize::new(0) },
            served: AtomicUsize::new(0),
        }
    }

    /// Loads a JSON Lines transcript. All keys must be strings (keyed mode)
    /// or all numbers (ordinal mode).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let err = |message: String| GatewayError::Transcript {
            path: path.display().to_string(),
            message,
        };
        let raw = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut keyed = HashMap::new();
        let mut ordinal: Vec<(u64, String)> = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry =
                serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            match entry.key {
                Value::String(k) => {
                    keyed.insert(k, entry.response);
                }
                Value::Number(n) => {
                    let pos = n
                        .as_u64()
                        .ok_or_else(|| err(format!("line {}: ordinal must be a non-negative integer", i + 1)))?;
                    ordinal.push((pos, entry.response));
                }
                other => return Err(err(format!("line {}: unsupported key {other}", i + 1))),
            }
        }
        match (keyed.is_empty(), ordinal.is_empty()) {
            (false, false) => Err(err("transcript mixes hashed and ordinal keys".into())),
            (true, false) => {
                ordinal.sort_by_key(|(p, _)| *p);
                Ok(Self::ordinal(ordinal.into_iter().map(|(_, r)| r).collect()))
            }
            _ => Ok(Self::keyed(keyed)),
        }
    }

    pub fn served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }
}

impl ChatGateway for ReplayGateway {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let text = match &self.mode {
            ReplayMode::Keyed(map) => {
                let key = req.content_key();
                map.get(&key).cloned().ok_or(GatewayError::ReplayMiss { key })?
            }
            ReplayMode::Ordinal { responses, next } => {
                let i = next.fetch_add(1, Ordering::SeqCst);
                responses
                    .get(i)
                    .cloned()
                    .ok_or(GatewayError::ReplayExhausted(responses.len()))?
            }
        };
        self.served.fetch_add(1, Ordering::SeqCst);
        Ok(Completion { text, usage: Usage::default() })
    }

    fn is_deterministic(&self) -> bool {
        matches!(self.mode, ReplayMode::Keyed(_))
    }
}

/// Builder for keyed replay transcripts.
#[derive(Debug, Default, Clone)]
pub struct Transcript {
    entries: Vec<(String, String)>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, req: &ChatRequest, response: impl Into<String>) -> &mut Self {
        self.entries.push((req.content_key(), response.into()));
        self
    }

    /// Adds an already-keyed exchange, e.g. one read back from a file.
    pub fn push(&mut self, key: impl Into<String>, response: impl Into<String>) -> &mut Self {
        self.entries.push((key.into(), response.into()));
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One line per distinct key, sorted by key, so transcripts recorded
    /// from parallel runs are byte-stable. The first response for a key wins.
    pub fn to_jsonl(&self) -> String {
        let mut unique: Vec<&(String, String)> = Vec::with_capacity(self.entries.len());
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if seen.insert(&e.0) {
                unique.push(e);
            }
        }
        unique.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = String::new();
        for (key, response) in unique {
            let entry = TranscriptEntry { key: Value::String(key.clone()), response: response.clone() };
            out.push_str(&serde_json::to_string(&entry).expect("transcript entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_jsonl())
    }

    pub fn into_gateway(self) -> ReplayGateway {
        ReplayGateway::keyed(self.entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("gpt-4", vec![ChatMessage::user(text)])
    }

    #[test]
    fn keys_ignore_request_tag() {
        let a = req("hi").tagged("one");
        let b = req("hi").tagged("two");
        assert_eq!(a.content_key(), b.content_key());
        assert_eq!(a.cache_key("http://x"), b.cache_key("http://x"));
        assert_ne!(a.cache_key("http://x"), a.cache_key("http://y"));
        let mut c = req("hi");
        c.temperature = 0.2;
        assert_ne!(a.content_key(), c.content_key());
    }

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new("m", vec![]).validate().is_err());
        assert!(ChatRequest::new("m", vec![ChatMessage::assistant("x")]).validate().is_err());
        let mut r = req("x");
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        assert!(ChatRequest::new("m", vec![ChatMessage::system("s"), ChatMessage::user("u")])
            .validate()
            .is_ok());
    }

    #[test]
    fn backoff_nondecreasing_and_capped() {
        let b = Backoff { base: Duration::from_millis(100), ceiling: Duration::from_millis(1500) };
        let draws = [0.99, 0.0, 0.5, 0.999, 0.0, 0.3, 1.0, 0.0];
        let delays: Vec<_> = draws.iter().enumerate().map(|(i, j)| b.delay(i as u32, *j)).collect();
        for w in delays.windows(2) {
            assert!(w[0] <= w[1], "{delays:?}");
        }
        assert_eq!(*delays.last().unwrap(), Duration::from_millis(1500));
        assert!(b.delay(0, 0.0) >= Duration::from_millis(50));
    }

    #[test]
    fn replay_keyed_and_miss() {
        let mut t = Transcript::new();
        t.record(&req("hello"), "canned");
        let g = t.into_gateway();
        assert_eq!(g.complete(&req("hello")).unwrap().text, "canned");
        match g.complete(&req("other")) {
            Err(GatewayError::ReplayMiss { key }) => assert_eq!(key, req("other").content_key()),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(g.served(), 1);
    }

    #[test]
    fn replay_ordinal_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        fs::write(
            &path,
            "{\"key\":2,\"response\":\"c\"}\n{\"key\":0,\"response\":\"a\"}\n{\"key\":1,\"response\":\"b\"}\n",
        )
        .unwrap();
        let g = ReplayGateway::from_file(&path).unwrap();
        let got: Vec<_> = ["x", "y", "z"].iter().map(|m| g.complete(&req(m)).unwrap().text).collect();
        assert_eq!(got, vec!["a", "b", "c"]);
        assert!(matches!(g.complete(&req("w")), Err(GatewayError::ReplayExhausted(3))));
    }

    #[test]
    fn transcript_file_round_trip_and_mixed_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut t = Transcript::new();
        t.record(&req("a"), "A").record(&req("b"), "B");
        t.write(&path).unwrap();
        let g = ReplayGateway::from_file(&path).unwrap();
        assert!(g.is_deterministic());
        assert_eq!(g.complete(&req("b")).unwrap().text, "B");

        let mixed = dir.path().join("m.jsonl");
        fs::write(&mixed, "{\"key\":0,\"response\":\"a\"}\n{\"key\":\"abc\",\"response\":\"b\"}\n").unwrap();
        assert!(matches!(ReplayGateway::from_file(&mixed), Err(GatewayError::Transcript { .. })));
    }

    #[test]
    fn parses_chat_response() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hey"}}],"usage":{"prompt_tokens":5,"completion_tokens":1}}"#;
        let c = parse_chat_response(body).unwrap();
        assert_eq!(c.text, "hey");
        assert_eq!(c.usage, Usage { prompt_tokens: 5, completion_tokens: 1 });
        assert!(parse_chat_response("{}").is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = GatewayConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.rate_limit_per_minute = 0;
        assert!(cfg.validate().is_err());
    }
}
