//! Chat-completion access with a content-addressed response cache.
//!
//! Every LLM call in the pipeline goes through [`Gateway`]. The gateway
//! checks the on-disk cache first (`<dir>/<first 2 hex>/<key>.json`), then
//! calls the configured [`Provider`] with retries, bounded by an in-flight
//! limit shared by all callers.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

pub const DEFAULT_MAX_TOKENS: u32 = 512;
pub const SINGLE_CHOICE_MAX_TOKENS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop: None,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_stop(mut self, stop: Vec<String>) -> Self {
        self.stop = Some(stop);
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    /// Raw completion text, untrimmed.
    pub text: String,
    pub provider_id: String,
    pub cached: bool,
    pub latency_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("endpoint {endpoint} unreachable after {attempts} attempt(s): {reason}")]
    EndpointUnreachable {
        endpoint: String,
        attempts: u32,
        reason: String,
    },
    #[error("provider returned status {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("no scripted rule matched prompt starting {0:?}")]
    NoRuleMatched(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        match self {
            GatewayError::EndpointUnreachable { .. } | GatewayError::Timeout { .. } => true,
            GatewayError::ProviderError { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// A completion backend. Implementations must be deterministic for
/// temperature 0 as far as the backend allows.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    stop: &'a Option<Vec<String>>,
}

/// SHA-256 over the canonical JSON of the request fields, as 64 hex chars.
pub fn cache_key(request: &CompletionRequest) -> String {
    let material = KeyMaterial {
        model: &request.model,
        prompt: &request.prompt,
        temperature: request.temperature,
        max_tokens: request.max_tokens,
        stop: &request.stop,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: CompletionRequest,
    pub response: String,
    pub created_at: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

/// One-file-per-key response cache with an append-only index journal.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let raw = fs::read(self.path_for(key)).ok()?;
        match serde_json::from_slice::<CacheEntry>(&raw) {
            Ok(entry) if entry.key == key => Some(entry),
            Ok(_) | Err(_) => {
                warn!(key, "ignoring unreadable cache entry");
                None
            }
        }
    }

    /// Writes the entry via temp file + rename so readers never observe a
    /// partial file.
    pub fn put(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        let err = |e: std::io::Error| GatewayError::Cache(e.to_string());
        let path = self.path_for(&entry.key);
        if let Some(existing) = self.get(&entry.key) {
            if existing.response != entry.response {
                warn!(
                    key = %entry.key,
                    "determinism warning: provider returned different text for an identical request"
                );
            }
            return Ok(());
        }
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(err)?;
        let mut hasher = DefaultHasher::new();
        std::thread::current().id().hash(&mut hasher);
        let tmp = parent.join(format!(
            ".{}.{}.{:x}.tmp",
            entry.key,
            std::process::id(),
            hasher.finish()
        ));
        let body = serde_json::to_vec_pretty(entry).map_err(|e| GatewayError::Cache(e.to_string()))?;
        fs::write(&tmp, body).map_err(err)?;
        fs::rename(&tmp, &path).map_err(err)?;

        let mut journal = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("index.jsonl"))
            .map_err(err)?;
        let line = serde_json::json!({"key": entry.key, "created_at": entry.created_at});
        writeln!(journal, "{line}").map_err(err)?;
        Ok(())
    }

    pub fn stats(&self) -> Result<CacheStats, GatewayError> {
        let mut stats = CacheStats::default();
        let read = |p: &Path| fs::read_dir(p).map_err(|e| GatewayError::Cache(e.to_string()));
        for shard in read(&self.dir)? {
            let shard = shard.map_err(|e| GatewayError::Cache(e.to_string()))?;
            if !shard.path().is_dir() {
                continue;
            }
            for file in read(&shard.path())? {
                let file = file.map_err(|e| GatewayError::Cache(e.to_string()))?;
                let name = file.file_name();
                let name = name.to_string_lossy();
                if name.ends_with(".json") && !name.starts_with('.') {
                    stats.entries += 1;
                    stats.bytes += file.metadata().map(|m| m.len()).unwrap_or(0);
                }
            }
        }
        Ok(stats)
    }

    /// Removes every entry and the journal; returns the number of entries removed.
    pub fn clear(&self) -> Result<usize, GatewayError> {
        let removed = self.stats()?.entries;
        for item in fs::read_dir(&self.dir).map_err(|e| GatewayError::Cache(e.to_string()))? {
            let path = item.map_err(|e| GatewayError::Cache(e.to_string()))?.path();
            let res = if path.is_dir() {
                fs::remove_dir_all(&path)
            } else {
                fs::remove_file(&path)
            };
            res.map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        Ok(removed)
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Delay before each retry; the number of retries is `backoff.len()`.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            backoff: vec![
                Duration::from_secs(1),
                Duration::from_secs(4),
                Duration::from_secs(16),
            ],
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { backoff: Vec::new() }
    }
}

/// Call accounting. `cache_hits + misses + failures == attempted` once all
/// calls have returned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub attempted: u64,
    pub cache_hits: u64,
    pub misses: u64,
    pub failures: u64,
    pub retries: u64,
}

#[derive(Default)]
struct Counters {
    attempted: AtomicU64,
    cache_hits: AtomicU64,
    misses: AtomicU64,
    failures: AtomicU64,
    retries: AtomicU64,
}

struct Limiter {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut active = self.active.lock().expect("limiter lock");
        while *active >= self.max {
            active = self.freed.wait(active).expect("limiter wait");
        }
        *active += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().expect("limiter lock");
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared entry point for all LLM calls.
pub struct Gateway {
    provider: Arc<dyn Provider>,
    model: String,
    temperature: f64,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    limiter: Limiter,
    counters: Counters,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, model: impl Into<String>) -> Self {
        Self {
            provider,
            model: model.into(),
            temperature: 0.0,
            cache: None,
            retry: RetryPolicy::default(),
            limiter: Limiter {
                max: 4,
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
            counters: Counters::default(),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limiter.max = max.max(1);
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.limiter.max
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    /// A request for `prompt` with the gateway's model and temperature.
    pub fn request(&self, prompt: impl Into<String>, max_tokens: u32) -> CompletionRequest {
        CompletionRequest::new(self.model.clone(), prompt)
            .with_temperature(self.temperature)
            .with_max_tokens(max_tokens)
    }

    pub fn stats(&self) -> CallStats {
        let c = &self.counters;
        CallStats {
            attempted: c.attempted.load(Ordering::SeqCst),
            cache_hits: c.cache_hits.load(Ordering::SeqCst),
            misses: c.misses.load(Ordering::SeqCst),
            failures: c.failures.load(Ordering::SeqCst),
            retries: c.retries.load(Ordering::SeqCst),
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        self.counters.attempted.fetch_add(1, Ordering::SeqCst);
        let result = self.complete_inner(request);
        match &result {
            Ok(r) if r.cached => self.counters.cache_hits.fetch_add(1, Ordering::SeqCst),
            Ok(_) => self.counters.misses.fetch_add(1, Ordering::SeqCst),
            Err(_) => self.counters.failures.fetch_add(1, Ordering::SeqCst),
        };
        result
    }

    fn complete_inner(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        let key = cache_key(request);
        if let Some(entry) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(CompletionResponse {
                text: entry.response,
                provider_id: self.provider.id().to_string(),
                cached: true,
                latency_ms: 0,
            });
        }

        let started = Instant::now();
        let text = {
            let _slot = self.limiter.acquire();
            self.call_with_retries(request)?
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        if let Some(cache) = &self.cache {
            cache.put(&CacheEntry {
                key,
                request: request.clone(),
                response: text.clone(),
                created_at: chrono::Utc::now().to_rfc3339(),
            })?;
        }
        Ok(CompletionResponse {
            text,
            provider_id: self.provider.id().to_string(),
            cached: false,
            latency_ms,
        })
    }

    fn call_with_retries(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let mut attempt = 0;
        loop {
            match self.provider.complete(request) {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable() && attempt < self.retry.backoff.len() => {
                    let delay = self.retry.backoff[attempt];
                    debug!(error = %e, ?delay, "retrying completion");
                    self.counters.retries.fetch_add(1, Ordering::SeqCst);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => {
                    let attempts = attempt as u32 + 1;
                    return Err(match e {
                        GatewayError::EndpointUnreachable { endpoint, reason, .. } => {
                            GatewayError::EndpointUnreachable {
                                endpoint,
                                attempts,
                                reason,
                            }
                        }
                        GatewayError::Timeout { .. } => GatewayError::Timeout { attempts },
                        other => other,
                    });
                }
            }
        }
    }

    /// Runs all requests, at most `max_in_flight` at a time, returning
    /// results in input order.
    pub fn complete_all(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<Result<CompletionResponse, GatewayError>> {
        let workers = self.limiter.max.min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<CompletionResponse, GatewayError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.complete(&requests[i]);
                    *slots[i].lock().expect("slot lock") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Scripted provider
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Matcher {
    /// Literal substring of the rendered prompt.
    Contains(String),
    /// Every literal must occur.
    AllOf(Vec<String>),
    Pattern(Regex),
}

impl Matcher {
    pub fn pattern(pattern: &str) -> Result<Self, regex::Error> {
        Regex::new(pattern).map(Matcher::Pattern)
    }

    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::AllOf(all) => all.iter().all(|s| prompt.contains(s.as_str())),
            Matcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NoMatchPolicy {
    Fail,
    Default(String),
}

/// Replies from an ordered rule list; first match wins. Records every
/// prompt it receives.
pub struct ScriptedProvider {
    id: String,
    rules: Vec<(Matcher, String)>,
    no_match: NoMatchPolicy,
    log: Mutex<Vec<String>>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<(Matcher, String)>, no_match: NoMatchPolicy) -> Self {
        Self {
            id: "scripted".into(),
            rules,
            no_match,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Loads a JSON script:
    /// `{"rules": [{"contains": "...", "reply": "$"}, {"all_of": [...], "reply": ..},
    /// {"pattern": "...", "reply": ..}], "default": "~"}`.
    /// A missing or null `default` selects the FAIL policy.
    pub fn from_json(raw: &str) -> Result<Self, String> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RuleFile {
            contains: Option<String>,
            all_of: Option<Vec<String>>,
            pattern: Option<String>,
            reply: String,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct ScriptFile {
            #[serde(default)]
            rules: Vec<RuleFile>,
            #[serde(default)]
            default: Option<String>,
        }
        let file: ScriptFile = serde_json::from_str(raw).map_err(|e| e.to_string())?;
        let mut rules = Vec::with_capacity(file.rules.len());
        for (i, rule) in file.rules.into_iter().enumerate() {
            let matcher = match (rule.contains, rule.all_of, rule.pattern) {
                (Some(s), None, None) => Matcher::Contains(s),
                (None, Some(all), None) => Matcher::AllOf(all),
                (None, None, Some(p)) => Matcher::pattern(&p).map_err(|e| format!("rule {i}: {e}"))?,
                _ => return Err(format!("rule {i}: exactly one of contains/all_of/pattern required")),
            };
            rules.push((matcher, rule.reply));
        }
        let policy = match file.default {
            Some(reply) => NoMatchPolicy::Default(reply),
            None => NoMatchPolicy::Fail,
        };
        Ok(Self::new(rules, policy))
    }

    pub fn calls(&self) -> Vec<String> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("log lock").len()
    }
}

impl Provider for ScriptedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.log
            .lock()
            .expect("log lock")
            .push(request.prompt.clone());
        if let Some((_, reply)) = self.rules.iter().find(|(m, _)| m.matches(&request.prompt)) {
            return Ok(reply.clone());
        }
        match &self.no_match {
            NoMatchPolicy::Default(reply) => Ok(reply.clone()),
            NoMatchPolicy::Fail => Err(GatewayError::NoRuleMatched(
                request.prompt.chars().take(80).collect(),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP providers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HttpFlavor {
    /// `POST {endpoint}/v1/chat/completions`
    OpenAi,
    /// `POST {endpoint}/api/generate`
    Ollama,
}

pub struct HttpProvider {
    id: String,
    flavor: HttpFlavor,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(
        flavor: HttpFlavor,
        endpoint: &str,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let base = endpoint.trim_end_matches('/');
        let url = match flavor {
            HttpFlavor::OpenAi if base.ends_with("/chat/completions") => base.to_string(),
            HttpFlavor::OpenAi if base.ends_with("/v1") => format!("{base}/chat/completions"),
            HttpFlavor::OpenAi => format!("{base}/v1/chat/completions"),
            HttpFlavor::Ollama if base.ends_with("/api/generate") => base.to_string(),
            HttpFlavor::Ollama => format!("{base}/api/generate"),
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        Ok(Self {
            id: format!("{flavor:?}:{base}").to_lowercase(),
            flavor,
            url,
            api_key,
            client,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn body(&self, request: &CompletionRequest) -> serde_json::Value {
        match self.flavor {
            HttpFlavor::OpenAi => {
                let mut body = serde_json::json!({
                    "model": request.model,
                    "messages": [{"role": "user", "content": request.prompt}],
                    "temperature": request.temperature,
                    "max_tokens": request.max_tokens,
                    "stream": false,
                });
                if let Some(stop) = &request.stop {
                    body["stop"] = serde_json::json!(stop);
                }
                body
            }
            HttpFlavor::Ollama => {
                let mut options = serde_json::json!({
                    "temperature": request.temperature,
                    "num_predict": request.max_tokens,
                });
                if let Some(stop) = &request.stop {
                    options["stop"] = serde_json::json!(stop);
                }
                serde_json::json!({
                    "model": request.model,
                    "prompt": request.prompt,
                    "stream": false,
                    "options": options,
                })
            }
        }
    }

    fn extract(&self, value: &serde_json::Value) -> Option<String> {
        match self.flavor {
            HttpFlavor::OpenAi => value
                .pointer("/choices/0/message/content")
                .or_else(|| value.pointer("/choices/0/text"))
                .and_then(|v| v.as_str())
                .map(str::to_string),
            HttpFlavor::Ollama => value
                .get("response")
                .and_then(|v| v.as_str())
                .map(str::to_string),
        }
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let mut builder = self.client.post(&self.url).json(&self.body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout { attempts: 1 }
            } else {
                GatewayError::EndpointUnreachable {
                    endpoint: self.url.clone(),
                    attempts: 1,
                    reason: e.to_string(),
                }
            }
        })?;
        let status = response.status();
        let body = response.text().map_err(|e| GatewayError::EndpointUnreachable {
            endpoint: self.url.clone(),
            attempts: 1,
            reason: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(GatewayError::ProviderError {
                status: status.as_u16(),
                body,
            });
        }
        let value: serde_json::Value =
            serde_json::from_str(&body).map_err(|_| GatewayError::ProviderError {
                status: status.as_u16(),
                body: body.clone(),
            })?;
        self.extract(&value).ok_or(GatewayError::ProviderError {
            status: status.as_u16(),
            body,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scripted(rules: Vec<(Matcher, &str)>, policy: NoMatchPolicy) -> Arc<ScriptedProvider> {
        Arc::new(ScriptedProvider::new(
            rules.into_iter().map(|(m, r)| (m, r.to_string())).collect(),
            policy,
        ))
    }

    #[test]
    fn request_defaults() {
        let req = CompletionRequest::new("m", "p");
        assert_eq!(req.temperature, 0.0);
        assert_eq!(req.max_tokens, DEFAULT_MAX_TOKENS);
        assert!(req.stop.is_none());
    }

    #[test]
    fn cache_key_shape_and_sensitivity() {
        let a = CompletionRequest::new("llama", "prompt a");
        let key = cache_key(&a);
        assert_eq!(key.len(), 64);
        assert!(key.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(key, cache_key(&a.clone()));
        assert_ne!(key, cache_key(&CompletionRequest::new("llama", "prompt b")));
        assert_ne!(key, cache_key(&a.clone().with_max_tokens(16)));
        assert_ne!(key, cache_key(&a.clone().with_temperature(0.5)));
        assert_ne!(key, cache_key(&a.clone().with_stop(vec!["\n".into()])));
        assert_ne!(key, cache_key(&CompletionRequest::new("qwen", "prompt a")));
    }

    #[test]
    fn cache_key_golden() {
        // Frozen digest of a fixture request; changing the key derivation
        // invalidates every existing cache.
        let req = CompletionRequest::new("llama3.1:70b", "netilmicin induces ototoxicity?")
            .with_max_tokens(16);
        assert_eq!(
            cache_key(&req),
            "bedc6388e11d0376fcbdb41d067356b7cf3cb454e0f91b730c0056a949f9ed69"
        );
    }

    #[test]
    fn scripted_rules_and_policies() {
        let p = scripted(vec![], NoMatchPolicy::Default("~".into()));
        assert_eq!(p.complete(&CompletionRequest::new("m", "anything")).unwrap(), "~");

        let p = scripted(
            vec![(Matcher::Contains("toxicity".into()), "$")],
            NoMatchPolicy::Fail,
        );
        assert_eq!(p.complete(&CompletionRequest::new("m", "about toxicity")).unwrap(), "$");
        assert!(matches!(
            p.complete(&CompletionRequest::new("m", "nothing")),
            Err(GatewayError::NoRuleMatched(_))
        ));
        assert_eq!(p.call_count(), 2);

        let p = scripted(
            vec![(Matcher::pattern(r"(?s)netilmicin.*ototoxicity").unwrap(), "$")],
            NoMatchPolicy::Fail,
        );
        let gw = Gateway::new(p.clone(), "m");
        let resp = gw
            .complete(&gw.request("does netilmicin induce ototoxicity", 16))
            .unwrap();
        assert_eq!(resp.text, "$");
        assert!(!resp.cached);
    }

    #[test]
    fn script_from_json() {
        let p = ScriptedProvider::from_json(
            r#"{"rules":[{"all_of":["a","b"],"reply":"1"},{"pattern":"^x","reply":"2"}],"default":"~"}"#,
        )
        .unwrap();
        let req = |s: &str| CompletionRequest::new("m", s);
        assert_eq!(p.complete(&req("b a")).unwrap(), "1");
        assert_eq!(p.complete(&req("xa")).unwrap(), "2");
        assert_eq!(p.complete(&req("zzz")).unwrap(), "~");
        assert!(ScriptedProvider::from_json(r#"{"rules":[{"reply":"1"}]}"#).is_err());
    }

    #[test]
    fn cache_hit_skips_provider() {
        let dir = tempfile::tempdir().unwrap();
        let p = scripted(vec![], NoMatchPolicy::Default("$".into()));
        let gw = Gateway::new(p.clone(), "m").with_cache(ResponseCache::open(dir.path()).unwrap());
        let req = gw.request("same prompt", 16);
        let first = gw.complete(&req).unwrap();
        let second = gw.complete(&req).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(first.text, second.text);
        assert_eq!(p.call_count(), 1);
        let stats = gw.stats();
        assert_eq!((stats.attempted, stats.cache_hits, stats.misses), (2, 1, 1));

        let key = cache_key(&req);
        assert!(dir.path().join(&key[..2]).join(format!("{key}.json")).exists());
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.stats().unwrap().entries, 1);
        assert_eq!(cache.clear().unwrap(), 1);
        assert_eq!(cache.stats().unwrap().entries, 0);
    }

    struct Flaky {
        failures_left: Mutex<u32>,
        error: GatewayError,
    }

    impl Provider for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _: &CompletionRequest) -> Result<String, GatewayError> {
            let mut left = self.failures_left.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(self.error.clone());
            }
            Ok("ok".into())
        }
    }

    fn unreachable() -> GatewayError {
        GatewayError::EndpointUnreachable {
            endpoint: "x".into(),
            attempts: 1,
            reason: "refused".into(),
        }
    }

    #[test]
    fn retries_transport_errors_then_gives_up() {
        let fast = RetryPolicy {
            backoff: vec![Duration::ZERO; 3],
        };
        let p = Arc::new(Flaky {
            failures_left: Mutex::new(2),
            error: unreachable(),
        });
        let gw = Gateway::new(p, "m").with_retry(fast.clone());
        assert_eq!(gw.complete(&gw.request("x", 16)).unwrap().text, "ok");
        assert_eq!(gw.stats().retries, 2);

        let p = Arc::new(Flaky {
            failures_left: Mutex::new(10),
            error: unreachable(),
        });
        let gw = Gateway::new(p, "m").with_retry(fast);
        match gw.complete(&gw.request("x", 16)) {
            Err(GatewayError::EndpointUnreachable { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(gw.stats().failures, 1);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let p = Arc::new(Flaky {
            failures_left: Mutex::new(1),
            error: GatewayError::ProviderError {
                status: 400,
                body: "bad".into(),
            },
        });
        let gw = Gateway::new(p, "m").with_retry(RetryPolicy {
            backoff: vec![Duration::ZERO; 3],
        });
        assert!(matches!(
            gw.complete(&gw.request("x", 16)),
            Err(GatewayError::ProviderError { status: 400, .. })
        ));
        assert_eq!(gw.stats().retries, 0);
    }

    #[test]
    fn invalid_requests_rejected() {
        let p = scripted(vec![], NoMatchPolicy::Default("~".into()));
        let gw = Gateway::new(p.clone(), "m");
        assert!(matches!(
            gw.complete(&gw.request("", 16)),
            Err(GatewayError::InvalidRequest(_))
        ));
        assert_eq!(p.call_count(), 0);
    }

    #[test]
    fn complete_all_preserves_order() {
        let rules = (0..20)
            .map(|i| (Matcher::Contains(format!("<{i}>")), i.to_string()))
            .collect();
        let p = Arc::new(ScriptedProvider::new(rules, NoMatchPolicy::Fail));
        let gw = Gateway::new(p, "m").with_max_in_flight(8);
        let reqs: Vec<_> = (0..20).map(|i| gw.request(format!("<{i}>"), 16)).collect();
        let out: Vec<String> = gw
            .complete_all(&reqs)
            .into_iter()
            .map(|r| r.unwrap().text)
            .collect();
        let expected: Vec<String> = (0..20).map(|i| i.to_string()).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn http_urls() {
        let t = Duration::from_secs(1);
        let p = HttpProvider::new(HttpFlavor::OpenAi, "http://h:1/", None, t).unwrap();
        assert_eq!(p.url(), "http://h:1/v1/chat/completions");
        let p = HttpProvider::new(HttpFlavor::OpenAi, "http://h:1/v1", None, t).unwrap();
        assert_eq!(p.url(), "http://h:1/v1/chat/completions");
        let p = HttpProvider::new(HttpFlavor::Ollama, "http://h:11434", None, t).unwrap();
        assert_eq!(p.url(), "http://h:11434/api/generate");
    }
}
