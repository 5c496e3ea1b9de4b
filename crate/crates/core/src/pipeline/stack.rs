//! Provider stack assembly from flat choices (`reference`, `mock`,
//! `http:<endpoint>`).

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Providers;
use crate::providers::cache::DEFAULT_CAPACITY_BYTES;
use crate::providers::http::{EndpointRegistry, HttpClient, HttpEmbedder, HttpLlm, HttpTranslator};
use crate::providers::mock::{ExtractiveLlm, GoldTable, MockTranslator};
use crate::providers::{CachedLlm, CallLog, Embedder, LlmProvider, ProviderError, ResponseCache, TranslationProvider};
use crate::queries::QueryItem;
use crate::retrieval::{IndexCache, ReferenceEmbedder, Reranker, DEFAULT_DIM};
use crate::translation::Translator;

/// Where a service comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    /// `reference` for embedders, `mock` for translators and LLMs.
    Local,
    Http(String),
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "mock" | "reference" => Ok(Source::Local),
            other => match other.strip_prefix("http:") {
                Some(id) if !id.is_empty() => Ok(Source::Http(id.to_string())),
                _ => Err(format!("unknown provider `{other}` (expected mock, reference or http:<endpoint>)")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackSpec {
    pub embedder: Source,
    pub dim: usize,
    pub translator: Source,
    /// Mock translator dictionary; without one every request falls
    /// through to the tagged passthrough.
    pub dictionary: Option<PathBuf>,
    pub llm: Source,
    /// Endpoint registry for `http:` providers.
    pub endpoints: Option<PathBuf>,
    /// Response and index caches live under this directory; in memory
    /// when absent.
    pub cache_dir: Option<PathBuf>,
    /// Separate response cache for translations; shares `cache_dir`
    /// when absent.
    pub translation_cache: Option<PathBuf>,
    pub offline: bool,
}

impl Default for StackSpec {
    fn default() -> Self {
        StackSpec {
            embedder: Source::Local,
            dim: DEFAULT_DIM,
            translator: Source::Local,
            dictionary: None,
            llm: Source::Local,
            endpoints: None,
            cache_dir: None,
            translation_cache: None,
            offline: false,
        }
    }
}

pub struct Stack {
    pub providers: Providers,
    pub log: CallLog,
}

impl Stack {
    pub fn translator_id(&self) -> String {
        self.providers.translator.provider_id().to_string()
    }

    pub fn llm_id(&self) -> String {
        self.providers.llm.id().to_string()
    }
}

/// Builds providers for `spec`, recording calls into `log`. The mock LLM
/// answers from the gold answers of `queries`.
pub fn build_stack(spec: &StackSpec, queries: &[QueryItem], log: CallLog) -> Result<Stack, ProviderError> {
    let (cache, index_cache) = match &spec.cache_dir {
        Some(dir) => (
            ResponseCache::open(&dir.join("responses"), DEFAULT_CAPACITY_BYTES)
                .map_err(|e| ProviderError::Other(format!("cache {}: {e}", dir.display())))?,
            IndexCache::with_dir(&dir.join("indexes")),
        ),
        None => (ResponseCache::in_memory(), IndexCache::in_memory()),
    };
    let cache = Arc::new(cache);
    let translation_cache = match &spec.translation_cache {
        Some(dir) => Arc::new(
            ResponseCache::open(dir, DEFAULT_CAPACITY_BYTES)
                .map_err(|e| ProviderError::Other(format!("translation cache {}: {e}", dir.display())))?,
        ),
        None => cache.clone(),
    };

    let needs_http = [&spec.embedder, &spec.translator, &spec.llm].iter().any(|s| matches!(s, Source::Http(_)));
    let client = if needs_http {
        let registry = match &spec.endpoints {
            Some(path) => EndpointRegistry::load(path)?,
            None => return Err(ProviderError::Other("http providers need an endpoint registry (`endpoints`)".into())),
        };
        Some(Arc::new(HttpClient::new(registry, cache.clone(), log.clone(), spec.offline)))
    } else {
        None
    };
    let client = || client.clone().expect("client built for http sources");

    let embedder: Arc<dyn Embedder> = match &spec.embedder {
        Source::Local => Arc::new(ReferenceEmbedder::new(spec.dim).map_err(|e| ProviderError::Fixture(e.to_string()))?),
        Source::Http(id) => {
            client().endpoint(id)?;
            Arc::new(HttpEmbedder::new(client(), id, spec.dim))
        }
    };
    let translator: Arc<dyn TranslationProvider> = match &spec.translator {
        Source::Local => match &spec.dictionary {
            Some(path) => Arc::new(MockTranslator::from_file(path)?),
            None => Arc::new(MockTranslator::new([])),
        },
        Source::Http(id) => {
            client().endpoint(id)?;
            Arc::new(HttpTranslator::new(client(), id))
        }
    };
    let llm: Arc<dyn LlmProvider> = match &spec.llm {
        Source::Local => {
            let mut golds = GoldTable::new();
            for q in queries {
                golds.insert(&q.question, q.answers.clone());
            }
            Arc::new(ExtractiveLlm::new(golds))
        }
        Source::Http(id) => {
            client().endpoint(id)?;
            Arc::new(HttpLlm::new(client(), id))
        }
    };

    // HTTP-backed services log their own network attempts; the wrappers
    // below only record cache hits and local invocations.
    let providers = Providers {
        embedder,
        translator: Arc::new(Translator::new(translator, translation_cache, log.clone(), false)),
        llm: Arc::new(CachedLlm::new(llm, cache, log.clone(), false)),
        reranker: Reranker::DotScore,
        index_cache: Arc::new(index_cache),
    };
    Ok(Stack { providers, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sources_parse() {
        assert_eq!("mock".parse::<Source>().unwrap(), Source::Local);
        assert_eq!("http:gpt".parse::<Source>().unwrap(), Source::Http("gpt".into()));
        assert!("http:".parse::<Source>().is_err());
        assert!("openai".parse::<Source>().is_err());
    }

    #[test]
    fn http_without_registry_is_rejected() {
        let spec = StackSpec { llm: Source::Http("x".into()), ..StackSpec::default() };
        assert!(build_stack(&spec, &[], CallLog::new()).is_err());
    }
}
