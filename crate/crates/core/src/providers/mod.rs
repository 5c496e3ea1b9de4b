//! Embedding, translation and LLM services behind uniform interfaces.
//!
//! Remote services are reached through [`http::HttpClient`], which caches
//! responses on disk, retries transient failures and records every attempt
//! in a [`CallLog`]. The mock implementations in [`mock`] are pure functions
//! of their fixture and request and back every offline test.

pub mod cache;
pub mod http;
pub mod log;
pub mod mock;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::lang::Lang;
use crate::retrieval::Vector;

pub use cache::{KeyLocks, ResponseCache};
pub use log::{CallLog, CallLogEntry, Outcome};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    #[error("{endpoint}: request {request_hash} failed after {attempts} attempts (last status: {last_status})")]
    Exhausted {
        endpoint: String,
        request_hash: String,
        attempts: u32,
        last_status: String,
    },
    #[error("{endpoint}: request {request_hash} rejected with status {status}")]
    NonTransient {
        endpoint: String,
        request_hash: String,
        status: u16,
    },
    #[error("{endpoint}: request {request_hash} is not cached and network calls are disabled (--offline)")]
    Offline { endpoint: String, request_hash: String },
    #[error("unknown provider endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("environment variable `{0}` required for authentication is not set")]
    MissingAuth(String),
    #[error("malformed response from {endpoint}: {message}")]
    MalformedResponse { endpoint: String, message: String },
    #[error("malformed fixture: {0}")]
    Fixture(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{0}")]
    Other(String),
}

/// Service kind of an endpoint or mock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProviderKind {
    Embed,
    Translate,
    Llm,
}

/// Text embedding model. Output vectors share one dimensionality.
pub trait Embedder: Send + Sync {
    /// Identifier used in index cache keys; must change whenever the vector
    /// space changes.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError>;
}

/// Output of a single translation provider call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translated {
    pub text: String,
    pub detected_src: Option<Lang>,
}

pub trait TranslationProvider: Send + Sync {
    fn id(&self) -> &str;
    /// `src = None` asks the provider to detect the source language.
    fn translate(&self, text: &str, src: Option<Lang>, tgt: Lang) -> Result<Translated, ProviderError>;
}

/// Decoding settings passed to generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    /// Greedy decoding with a 2048-token budget.
    fn default() -> Self {
        GenerationParams { temperature: 0.0, max_tokens: 2048 }
    }
}

pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError>;
}

/// Joint query/passage scorer. No implementation ships; the slot lets a
/// cross-encoder replace the dot-score rerank.
pub trait CrossEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>, ProviderError>;
}

/// LLM wrapper that serves repeated prompts from a response cache and logs
/// each call.
pub struct CachedLlm {
    inner: Arc<dyn LlmProvider>,
    cache: Arc<ResponseCache>,
    log: CallLog,
    locks: KeyLocks,
    network: bool,
}

impl CachedLlm {
    /// `network` marks whether a miss reaches a remote service; it is
    /// recorded in the call log.
    pub fn new(inner: Arc<dyn LlmProvider>, cache: Arc<ResponseCache>, log: CallLog, network: bool) -> Self {
        CachedLlm { inner, cache, log, locks: KeyLocks::default(), network }
    }
}

impl LlmProvider for CachedLlm {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        let request = serde_json::json!({
            "kind": "llm",
            "provider": self.inner.id(),
            "prompt": prompt,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let key = cache::request_hash(&request);
        let _guard = self.locks.lock(&key);
        let started = std::time::Instant::now();
        if let Some(hit) = self.cache.get(&key) {
            let text: String = serde_json::from_str(&hit).map_err(|e| ProviderError::MalformedResponse {
                endpoint: self.inner.id().to_string(),
                message: format!("cached entry {key}: {e}"),
            })?;
            self.log.record(CallLogEntry::cache_hit(self.inner.id(), &key, started.elapsed()));
            return Ok(text);
        }
        let result = self.inner.generate(prompt, params);
        let outcome = if result.is_ok() { Outcome::Ok } else { Outcome::Failed };
        self.log.record(CallLogEntry::invocation(self.inner.id(), &key, started.elapsed(), outcome, self.network));
        let text = result?;
        self.cache.put(&key, &serde_json::to_string(&text).expect("string serializes"));
        Ok(text)
    }
}

/// Fixture handed to [`register_mock`].
pub enum MockFixture<'a> {
    /// No fixture: the reference hashed n-gram embedder of the given dimension.
    ReferenceEmbedder { dim: usize },
    /// Line-delimited translation dictionary file.
    Dictionary(&'a Path),
    /// Question → gold answers table for the extractive generator.
    Golds(mock::GoldTable),
}

pub enum ProviderHandle {
    Embed(Arc<dyn Embedder>),
    Translate(Arc<dyn TranslationProvider>),
    Llm(Arc<dyn LlmProvider>),
}

impl std::fmt::Debug for ProviderHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProviderHandle::Embed(e) => write!(f, "Embed({})", e.id()),
            ProviderHandle::Translate(t) => write!(f, "Translate({})", t.id()),
            ProviderHandle::Llm(l) => write!(f, "Llm({})", l.id()),
        }
    }
}

/// Builds a mock provider of `kind` from its fixture.
pub fn register_mock(kind: ProviderKind, fixture: MockFixture<'_>) -> Result<ProviderHandle, ProviderError> {
    match (kind, fixture) {
        (ProviderKind::Embed, MockFixture::ReferenceEmbedder { dim }) => {
            let embedder = crate::retrieval::ReferenceEmbedder::new(dim)
                .map_err(|e| ProviderError::Fixture(e.to_string()))?;
            Ok(ProviderHandle::Embed(Arc::new(embedder)))
        }
        (ProviderKind::Translate, MockFixture::Dictionary(path)) => {
            Ok(ProviderHandle::Translate(Arc::new(mock::MockTranslator::from_file(path)?)))
        }
        (ProviderKind::Llm, MockFixture::Golds(golds)) => {
            Ok(ProviderHandle::Llm(Arc::new(mock::ExtractiveLlm::new(golds))))
        }
        (kind, _) => Err(ProviderError::Fixture(format!("fixture does not match provider kind {kind:?}"))),
    }
}
