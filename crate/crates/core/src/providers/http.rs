//! JSON-over-HTTP provider client with caching, retry and call logging.
//!
//! Wire schemas (version 1):
//!
//! | kind      | request                                                   | response                                  |
//! |-----------|-----------------------------------------------------------|-------------------------------------------|
//! | EMBED     | `{"schema":"xlrag.embed.v1","texts":[..],"dim":n}`        | `{"vectors":[[f32; n], ..]}`              |
//! | TRANSLATE | `{"schema":"xlrag.translate.v1","text":..,"src":..,"tgt":..}` | `{"text":..,"detected_src":..}`       |
//! | LLM       | `{"schema":"xlrag.generate.v1","prompt":..,"temperature":t,"max_tokens":m}` | `{"text":..}`           |
//!
//! `src` is an ISO 639-1 code or `"auto"`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cache::{request_hash, KeyLocks, ResponseCache};
use super::log::{CallLog, CallLogEntry, Outcome};
use super::{Embedder, GenerationParams, LlmProvider, ProviderError, ProviderKind, Translated, TranslationProvider};
use crate::lang::Lang;
use crate::retrieval::Vector;

fn default_timeout() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> f64 {
    0.5
}
fn default_concurrency() -> usize {
    4
}

/// A remote service endpoint as listed in the endpoint registry file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub id: String,
    pub kind: ProviderKind,
    pub base_url: String,
    /// Name of the environment variable holding a bearer token, if any.
    #[serde(default)]
    pub auth_env_var: Option<String>,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Seconds.
    #[serde(default = "default_backoff")]
    pub backoff_base: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

impl ProviderEndpoint {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout.is_nan() || self.timeout <= 0.0 {
            return Err(ProviderError::Fixture(format!("endpoint `{}`: timeout must be > 0", self.id)));
        }
        if self.backoff_base < 0.0 {
            return Err(ProviderError::Fixture(format!("endpoint `{}`: negative backoff", self.id)));
        }
        if self.max_concurrency == 0 {
            return Err(ProviderError::Fixture(format!("endpoint `{}`: max_concurrency must be > 0", self.id)));
        }
        Ok(())
    }

    /// Base delay before retry number `retry` (1-based), without jitter.
    fn backoff(&self, retry: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_base * 2f64.powi(retry.saturating_sub(1) as i32))
    }
}

/// Endpoints by id, loaded from a JSON-lines registry file.
#[derive(Debug, Clone, Default)]
pub struct EndpointRegistry {
    endpoints: BTreeMap<String, ProviderEndpoint>,
}

impl EndpointRegistry {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
        let mut registry = EndpointRegistry::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ep: ProviderEndpoint = serde_json::from_str(line)
                .map_err(|e| ProviderError::Fixture(format!("{} line {}: {e}", path.display(), i + 1)))?;
            registry.insert(ep)?;
        }
        Ok(registry)
    }

    pub fn insert(&mut self, endpoint: ProviderEndpoint) -> Result<(), ProviderError> {
        endpoint.validate()?;
        self.endpoints.insert(endpoint.id.clone(), endpoint);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ProviderEndpoint> {
        self.endpoints.get(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
}

/// Raw HTTP POST of a JSON body.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<TransportResponse, TransportError>;
}

#[derive(Debug, Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<TransportResponse, TransportError> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let mut req = agent.post(url).set("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_string(body) {
            Ok(resp) => {
                let status = resp.status();
                let body = resp.into_string().map_err(|e| TransportError::Connection(e.to_string()))?;
                Ok(TransportResponse { status, body })
            }
            Err(ureq::Error::Status(status, resp)) => Ok(TransportResponse {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("Timeout") {
                    Err(TransportError::Timeout)
                } else {
                    Err(TransportError::Connection(msg))
                }
            }
        }
    }
}

/// Counting semaphore bounding in-flight requests per endpoint.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { permits: Mutex::new(n), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.freed.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

type Sleeper = dyn Fn(Duration) + Send + Sync;

/// Cached, retrying client shared by all HTTP adapters.
pub struct HttpClient {
    registry: EndpointRegistry,
    transport: Arc<dyn Transport>,
    cache: Arc<ResponseCache>,
    log: CallLog,
    offline: bool,
    locks: KeyLocks,
    limits: Mutex<BTreeMap<String, Arc<Semaphore>>>,
    sleeper: Box<Sleeper>,
    jitter: Mutex<ChaCha8Rng>,
}

impl HttpClient {
    pub fn new(registry: EndpointRegistry, cache: Arc<ResponseCache>, log: CallLog, offline: bool) -> Self {
        HttpClient {
            registry,
            transport: Arc::new(UreqTransport),
            cache,
            log,
            offline,
            locks: KeyLocks::default(),
            limits: Mutex::new(BTreeMap::new()),
            sleeper: Box::new(std::thread::sleep),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    /// Replaces the backoff sleep, e.g. with a no-op in tests.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Box::new(sleeper);
        self
    }

    pub fn log(&self) -> &CallLog {
        &self.log
    }

    pub fn endpoint(&self, id: &str) -> Result<&ProviderEndpoint, ProviderError> {
        self.registry.get(id).ok_or_else(|| ProviderError::UnknownEndpoint(id.to_string()))
    }

    fn limit(&self, ep: &ProviderEndpoint) -> Arc<Semaphore> {
        self.limits
            .lock()
            .unwrap()
            .entry(ep.id.clone())
            .or_insert_with(|| Arc::new(Semaphore::new(ep.max_concurrency)))
            .clone()
    }

    /// Sends `payload` to endpoint `id`, serving it from cache when possible.
    pub fn call(&self, id: &str, payload: &serde_json::Value) -> Result<serde_json::Value, ProviderError> {
        let ep = self.endpoint(id)?.clone();
        let hash = request_hash(&serde_json::json!({ "endpoint": id, "payload": payload }));
        let _key = self.locks.lock(&hash);
        let started = Instant::now();

        if let Some(hit) = self.cache.get(&hash) {
            self.log.record(CallLogEntry::cache_hit(id, &hash, started.elapsed()));
            return serde_json::from_str(&hit).map_err(|e| ProviderError::MalformedResponse {
                endpoint: id.to_string(),
                message: format!("cached entry: {e}"),
            });
        }
        if self.offline {
            self.log.record(CallLogEntry::invocation(id, &hash, started.elapsed(), Outcome::Failed, false));
            return Err(ProviderError::Offline { endpoint: id.to_string(), request_hash: hash });
        }
        let bearer = match &ep.auth_env_var {
            Some(var) => Some(std::env::var(var).map_err(|_| ProviderError::MissingAuth(var.clone()))?),
            None => None,
        };

        let body = serde_json::to_string(payload).expect("payload serializes");
        let timeout = Duration::from_secs_f64(ep.timeout);
        let limit = self.limit(&ep);
        let _permit = limit.acquire();

        let mut last_status = String::from("none");
        for attempt in 1..=ep.max_retries + 1 {
            let mut backoff = Duration::ZERO;
            if attempt > 1 {
                let base = ep.backoff(attempt - 1);
                // jitter in [0, base/2) keeps successive delays non-decreasing
                let jitter = self.jitter.lock().unwrap().gen_range(0.0..0.5);
                backoff = base.mul_f64(1.0 + jitter);
                (self.sleeper)(backoff);
            }
            let t0 = Instant::now();
            let result = self.transport.post_json(&ep.base_url, bearer.as_deref(), &body, timeout);
            let latency_ms = t0.elapsed().as_millis() as u64;
            let mut entry = CallLogEntry {
                endpoint: id.to_string(),
                request_hash: hash.clone(),
                cached: false,
                network: true,
                attempt,
                latency_ms,
                backoff_ms: backoff.as_millis() as u64,
                status: None,
                outcome: Outcome::Failed,
            };
            match result {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    entry.status = Some(resp.status);
                    let value: serde_json::Value = match serde_json::from_str(&resp.body) {
                        Ok(v) => v,
                        Err(e) => {
                            self.log.record(entry);
                            return Err(ProviderError::MalformedResponse { endpoint: id.to_string(), message: e.to_string() });
                        }
                    };
                    entry.outcome = if attempt == 1 { Outcome::Ok } else { Outcome::RetriedOk };
                    self.log.record(entry);
                    self.cache.put(&hash, &resp.body);
                    return Ok(value);
                }
                Ok(resp) => {
                    entry.status = Some(resp.status);
                    self.log.record(entry);
                    let transient = resp.status == 429 || resp.status >= 500;
                    if !transient {
                        return Err(ProviderError::NonTransient {
                            endpoint: id.to_string(),
                            request_hash: hash,
                            status: resp.status,
                        });
                    }
                    last_status = resp.status.to_string();
                }
                Err(e) => {
                    self.log.record(entry);
                    last_status = e.to_string();
                }
            }
            tracing::debug!(endpoint = id, attempt, status = %last_status, "transient provider failure");
        }
        Err(ProviderError::Exhausted {
            endpoint: id.to_string(),
            request_hash: hash,
            attempts: ep.max_retries + 1,
            last_status,
        })
    }
}

fn malformed(endpoint: &str, message: impl Into<String>) -> ProviderError {
    ProviderError::MalformedResponse { endpoint: endpoint.to_string(), message: message.into() }
}

pub struct HttpEmbedder {
    client: Arc<HttpClient>,
    endpoint: String,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(client: Arc<HttpClient>, endpoint: &str, dim: usize) -> Self {
        HttpEmbedder { client, endpoint: endpoint.to_string(), dim }
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}/{}", self.endpoint, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError> {
        #[derive(Deserialize)]
        struct Resp {
            vectors: Vec<Vec<f32>>,
        }
        let payload = serde_json::json!({ "schema": "xlrag.embed.v1", "texts": texts, "dim": self.dim });
        let resp: Resp = serde_json::from_value(self.client.call(&self.endpoint, &payload)?)
            .map_err(|e| malformed(&self.endpoint, e.to_string()))?;
        if resp.vectors.len() != texts.len() || resp.vectors.iter().any(|v| v.len() != self.dim) {
            return Err(malformed(&self.endpoint, "vector count or dimension mismatch"));
        }
        Ok(resp.vectors.into_iter().map(Vector::normalized).collect())
    }
}

pub struct HttpTranslator {
    client: Arc<HttpClient>,
    endpoint: String,
    id: String,
}

impl HttpTranslator {
    pub fn new(client: Arc<HttpClient>, endpoint: &str) -> Self {
        HttpTranslator { client, endpoint: endpoint.to_string(), id: format!("http:{endpoint}") }
    }
}

impl TranslationProvider for HttpTranslator {
    fn id(&self) -> &str {
        &self.id
    }

    fn translate(&self, text: &str, src: Option<Lang>, tgt: Lang) -> Result<Translated, ProviderError> {
        #[derive(Deserialize)]
        struct Resp {
            text: String,
            #[serde(default)]
            detected_src: Option<String>,
        }
        let payload = serde_json::json!({
            "schema": "xlrag.translate.v1",
            "text": text,
            "src": src.map_or("auto".to_string(), |l| l.to_string()),
            "tgt": tgt.to_string(),
        });
        let resp: Resp = serde_json::from_value(self.client.call(&self.endpoint, &payload)?)
            .map_err(|e| malformed(&self.endpoint, e.to_string()))?;
        Ok(Translated {
            text: resp.text,
            detected_src: resp.detected_src.and_then(|s| s.parse().ok()).or(src),
        })
    }
}

pub struct HttpLlm {
    client: Arc<HttpClient>,
    endpoint: String,
    id: String,
}

impl HttpLlm {
    pub fn new(client: Arc<HttpClient>, endpoint: &str) -> Self {
        HttpLlm { client, endpoint: endpoint.to_string(), id: format!("http:{endpoint}") }
    }
}

impl LlmProvider for HttpLlm {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        let payload = serde_json::json!({
            "schema": "xlrag.generate.v1",
            "prompt": prompt,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let value = self.client.call(&self.endpoint, &payload)?;
        value
            .get("text")
            .and_then(|t| t.as_str())
            .map(str::to_string)
            .ok_or_else(|| malformed(&self.endpoint, "missing `text`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Replays scripted responses and counts requests.
    struct Scripted {
        script: Mutex<VecDeque<Result<TransportResponse, TransportError>>>,
        calls: Mutex<usize>,
    }

    impl Scripted {
        fn new(items: Vec<Result<TransportResponse, TransportError>>) -> Arc<Self> {
            Arc::new(Scripted { script: Mutex::new(items.into()), calls: Mutex::new(0) })
        }
        fn calls(&self) -> usize {
            *self.calls.lock().unwrap()
        }
    }

    impl Transport for Scripted {
        fn post_json(&self, _: &str, _: Option<&str>, _: &str, _: Duration) -> Result<TransportResponse, TransportError> {
            *self.calls.lock().unwrap() += 1;
            self.script.lock().unwrap().pop_front().expect("script exhausted")
        }
    }

    fn ok(body: &str) -> Result<TransportResponse, TransportError> {
        Ok(TransportResponse { status: 200, body: body.into() })
    }
    fn status(code: u16) -> Result<TransportResponse, TransportError> {
        Ok(TransportResponse { status: code, body: String::new() })
    }

    fn endpoint(max_retries: u32) -> ProviderEndpoint {
        ProviderEndpoint {
            id: "stub".into(),
            kind: ProviderKind::Llm,
            base_url: "http://127.0.0.1:9/generate".into(),
            auth_env_var: None,
            timeout: 1.0,
            max_retries,
            backoff_base: 0.1,
            max_concurrency: 4,
        }
    }

    fn client(transport: Arc<Scripted>, max_retries: u32, offline: bool) -> HttpClient {
        let mut reg = EndpointRegistry::default();
        reg.insert(endpoint(max_retries)).unwrap();
        HttpClient::new(reg, Arc::new(ResponseCache::in_memory()), CallLog::new(), offline)
            .with_transport(transport)
            .with_sleeper(|_| {})
    }

    #[test]
    fn second_identical_request_is_cached() {
        let t = Scripted::new(vec![ok(r#"{"text":"Answer: 8"}"#)]);
        let c = client(t.clone(), 3, false);
        let payload = serde_json::json!({"prompt": "q"});
        let a = c.call("stub", &payload).unwrap();
        let b = c.call("stub", &payload).unwrap();
        assert_eq!(a, b);
        assert_eq!(t.calls(), 1);
        let log = c.log().entries();
        assert_eq!(log.len(), 2);
        assert!(!log[0].cached && log[0].network);
        assert!(log[1].cached && !log[1].network);
    }

    #[test]
    fn retries_transient_failures() {
        let t = Scripted::new(vec![status(503), Err(TransportError::Timeout), ok(r#"{"text":"x"}"#)]);
        let c = client(t.clone(), 3, false);
        c.call("stub", &serde_json::json!({"p": 1})).unwrap();
        let log = c.log().entries();
        assert_eq!(log.len(), 3);
        assert_eq!(log.iter().map(|e| e.attempt).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(log[2].outcome, Outcome::RetriedOk);
        assert_eq!(t.calls(), 3);
        // backoff non-decreasing
        assert!(log.windows(2).all(|w| w[0].backoff_ms <= w[1].backoff_ms));
    }

    #[test]
    fn unauthorized_fails_without_retry() {
        let t = Scripted::new(vec![status(401)]);
        let c = client(t.clone(), 3, false);
        let err = c.call("stub", &serde_json::json!({})).unwrap_err();
        assert!(matches!(err, ProviderError::NonTransient { status: 401, .. }));
        assert_eq!(t.calls(), 1);
    }

    #[test]
    fn exhausted_retries_report_hash_and_status() {
        let t = Scripted::new(vec![status(429), status(500), status(502)]);
        let c = client(t.clone(), 2, false);
        let err = c.call("stub", &serde_json::json!({"p": 2})).unwrap_err();
        match err {
            ProviderError::Exhausted { attempts, last_status, request_hash, .. } => {
                assert_eq!(attempts, 3);
                assert_eq!(last_status, "502");
                assert_eq!(request_hash.len(), 64);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.calls(), 3);
    }

    #[test]
    fn offline_miss_never_touches_transport() {
        let t = Scripted::new(vec![]);
        let c = client(t.clone(), 3, true);
        let err = c.call("stub", &serde_json::json!({"p": 3})).unwrap_err();
        assert!(matches!(err, ProviderError::Offline { .. }));
        assert_eq!(t.calls(), 0);
        assert_eq!(c.log().network_calls(), 0);
    }

    #[test]
    fn missing_auth_env_is_reported() {
        let mut reg = EndpointRegistry::default();
        let mut ep = endpoint(0);
        ep.auth_env_var = Some("XLRAG_TEST_TOKEN_THAT_IS_UNSET".into());
        reg.insert(ep).unwrap();
        let c = HttpClient::new(reg, Arc::new(ResponseCache::in_memory()), CallLog::new(), false)
            .with_transport(Scripted::new(vec![]));
        assert!(matches!(c.call("stub", &serde_json::json!({})), Err(ProviderError::MissingAuth(_))));
    }

    #[test]
    fn invalid_endpoint_rejected() {
        let mut ep = endpoint(1);
        ep.timeout = 0.0;
        assert!(EndpointRegistry::default().insert(ep).is_err());
    }
}
