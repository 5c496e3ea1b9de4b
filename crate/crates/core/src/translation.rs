//! Query and document translation through a cached provider.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::lang::Lang;
use crate::providers::cache::request_hash;
use crate::providers::mock::translation_key_text;
use crate::providers::{CallLog, CallLogEntry, KeyLocks, Outcome, ProviderError, ResponseCache, TranslationProvider};
use crate::retrieval::{PassageTranslation, RetrievedPassage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRequest {
    pub text: String,
    /// `None` asks for source detection.
    pub src: Option<Lang>,
    pub tgt: Lang,
    pub provider_id: String,
}

impl TranslationRequest {
    /// Cache key over normalized text, languages and provider.
    pub fn key(&self) -> String {
        request_hash(&serde_json::json!({
            "kind": "translate",
            "provider": self.provider_id,
            "text": translation_key_text(&self.text),
            "src": self.src.map_or("auto".to_string(), |l| l.to_string()),
            "tgt": self.tgt.to_string(),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub text: String,
    pub detected_src: Option<Lang>,
    pub cached: bool,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum TranslationError {
    #[error("nothing to translate")]
    EmptyText,
    #[error("translation {request_hash} failed: {source}")]
    Provider {
        request_hash: String,
        #[source]
        source: ProviderError,
    },
    #[error("passage `{doc_id}`: {source}")]
    Passage {
        doc_id: String,
        #[source]
        source: Box<TranslationError>,
    },
}

/// What to do when one passage fails to translate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    #[default]
    FailRun,
    /// Keep the untranslated passage and flag it in its provenance.
    KeepOriginal,
}

impl std::str::FromStr for FailurePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fail-run" => Ok(FailurePolicy::FailRun),
            "keep-original" => Ok(FailurePolicy::KeepOriginal),
            other => Err(format!("unknown translation failure policy `{other}`")),
        }
    }
}

/// Counters from one [`Translator::translate_documents`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentTranslationStats {
    pub translated: usize,
    pub cache_hits: usize,
    pub failed: usize,
}

/// Write-through cache in front of a translation provider. Identical
/// in-flight requests wait on one another, so each distinct key reaches
/// the provider once.
pub struct Translator {
    provider: Arc<dyn TranslationProvider>,
    cache: Arc<ResponseCache>,
    log: CallLog,
    locks: KeyLocks,
    network: bool,
}

impl Translator {
    pub fn new(provider: Arc<dyn TranslationProvider>, cache: Arc<ResponseCache>, log: CallLog, network: bool) -> Self {
        Translator { provider, cache, log, locks: KeyLocks::default(), network }
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn translate(&self, text: &str, src: Option<Lang>, tgt: Lang) -> Result<TranslationResult, TranslationError> {
        if text.trim().is_empty() {
            return Err(TranslationError::EmptyText);
        }
        if src == Some(tgt) {
            return Ok(TranslationResult { text: text.to_string(), detected_src: src, cached: false });
        }
        let req = TranslationRequest { text: text.to_string(), src, tgt, provider_id: self.provider.id().to_string() };
        let key = req.key();
        let _guard = self.locks.lock(&key);
        let started = Instant::now();
        if let Some(hit) = self.cache.get(&key) {
            if let Ok(mut res) = serde_json::from_str::<TranslationResult>(&hit) {
                self.log.record(CallLogEntry::cache_hit(self.provider.id(), &key, started.elapsed()));
                res.cached = true;
                return Ok(res);
            }
            tracing::warn!(key, "unreadable translation cache entry; re-translating");
        }
        let out = self.provider.translate(text, src, tgt);
        let outcome = if out.is_ok() { Outcome::Ok } else { Outcome::Failed };
        self.log.record(CallLogEntry::invocation(self.provider.id(), &key, started.elapsed(), outcome, self.network));
        let out = out.map_err(|source| TranslationError::Provider { request_hash: key.clone(), source })?;
        let res = TranslationResult { text: out.text, detected_src: out.detected_src.or(src), cached: false };
        self.cache.put(&key, &serde_json::to_string(&res).expect("result serializes"));
        Ok(res)
    }

    pub fn translate_request(&self, req: &TranslationRequest) -> Result<TranslationResult, TranslationError> {
        self.translate(&req.text, req.src, req.tgt)
    }

    /// Translates in order; duplicates after the first are cache hits.
    pub fn translate_batch(&self, texts: &[&str], src: Option<Lang>, tgt: Lang) -> Result<Vec<TranslationResult>, TranslationError> {
        texts.iter().map(|t| self.translate(t, src, tgt)).collect()
    }

    /// Replaces each passage's text by its translation into `tgt`. Order,
    /// ids, scores and ranks are untouched; the original language goes to
    /// the passage's translation provenance.
    pub fn translate_documents(
        &self,
        passages: &[RetrievedPassage],
        tgt: Lang,
        policy: FailurePolicy,
    ) -> Result<(Vec<RetrievedPassage>, DocumentTranslationStats), TranslationError> {
        let mut stats = DocumentTranslationStats::default();
        let mut out = Vec::with_capacity(passages.len());
        for p in passages {
            let mut q = p.clone();
            if p.lang == tgt {
                q.translation = Some(PassageTranslation { original_lang: p.lang, translated: false, cached: false, failed: false });
                out.push(q);
                continue;
            }
            match self.translate(&p.text, Some(p.lang), tgt) {
                Ok(res) => {
                    stats.translated += 1;
                    stats.cache_hits += usize::from(res.cached);
                    q.text = res.text;
                    q.lang = tgt;
                    q.translation =
                        Some(PassageTranslation { original_lang: p.lang, translated: true, cached: res.cached, failed: false });
                }
                Err(e) => match policy {
                    FailurePolicy::FailRun => {
                        return Err(TranslationError::Passage { doc_id: p.doc_id.clone(), source: Box::new(e) })
                    }
                    FailurePolicy::KeepOriginal => {
                        tracing::warn!(doc_id = %p.doc_id, error = %e, "keeping untranslated passage");
                        stats.failed += 1;
                        q.translation =
                            Some(PassageTranslation { original_lang: p.lang, translated: false, cached: false, failed: true });
                    }
                },
            }
            out.push(q);
        }
        Ok((out, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{DictionaryEntry, MockTranslator};
    use crate::providers::Translated;

    fn translator(entries: Vec<DictionaryEntry>) -> (Translator, Arc<MockTranslator>, CallLog) {
        let mock = Arc::new(MockTranslator::new(entries));
        let log = CallLog::new();
        (Translator::new(mock.clone(), Arc::new(ResponseCache::in_memory()), log.clone(), false), mock, log)
    }

    fn passage(id: &str, lang: &str, text: &str, rank: usize) -> RetrievedPassage {
        RetrievedPassage { doc_id: id.into(), lang: lang.parse().unwrap(), text: text.into(), score: 1.0 / rank as f64, rank, translation: None }
    }

    #[test]
    fn identity_skips_provider() {
        let (t, mock, log) = translator(vec![]);
        let r = t.translate("Aqua", Some(Lang::EN), Lang::EN).unwrap();
        assert_eq!(r, TranslationResult { text: "Aqua".into(), detected_src: Some(Lang::EN), cached: false });
        assert_eq!(mock.invocations(), 0);
        assert!(log.is_empty());
    }

    #[test]
    fn repeat_is_cached() {
        let es: Lang = "es".parse().unwrap();
        let (t, mock, log) = translator(vec![DictionaryEntry {
            src_lang: es,
            tgt_lang: Lang::EN,
            src_text: "¿quién escribió variaciones de Campanita del lugar?".into(),
            tgt_text: "Who wrote variations of Tinkerbell of the Place?".into(),
        }]);
        let q = "¿quién escribió variaciones de Campanita del lugar?";
        let a = t.translate(q, Some(es), Lang::EN).unwrap();
        let b = t.translate(q, Some(es), Lang::EN).unwrap();
        assert!(!a.cached && b.cached);
        assert_eq!(a.text, b.text);
        assert_eq!(a.text, "Who wrote variations of Tinkerbell of the Place?");
        assert_eq!(mock.invocations(), 1);
        assert_eq!(log.entries().iter().map(|e| e.cached).collect::<Vec<_>>(), vec![false, true]);
    }

    #[test]
    fn mixed_passages_translate_non_target_only() {
        let (t, mock, _) = translator(vec![]);
        let ps = vec![
            passage("1", "ko", "가", 1),
            passage("2", "ko", "나", 2),
            passage("3", "en", "c", 3),
            passage("4", "ko", "다", 4),
            passage("5", "en", "e", 5),
        ];
        let (out, stats) = t.translate_documents(&ps, Lang::EN, FailurePolicy::FailRun).unwrap();
        assert_eq!(mock.invocations(), 3);
        assert_eq!(stats.translated, 3);
        assert!(out.iter().all(|p| p.lang == Lang::EN));
        assert_eq!(out.iter().map(|p| p.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert_eq!(out.iter().map(|p| p.score).collect::<Vec<_>>(), ps.iter().map(|p| p.score).collect::<Vec<_>>());
        assert_eq!(out[0].translation.as_ref().unwrap().original_lang, "ko".parse().unwrap());
        assert_eq!(out[0].text, "⟦mt:ko→en⟧ 가");
    }

    struct Broken;
    impl TranslationProvider for Broken {
        fn id(&self) -> &str {
            "broken"
        }
        fn translate(&self, _: &str, _: Option<Lang>, _: Lang) -> Result<Translated, ProviderError> {
            Err(ProviderError::Unsupported("pair".into()))
        }
    }

    #[test]
    fn failure_policies() {
        let t = Translator::new(Arc::new(Broken), Arc::new(ResponseCache::in_memory()), CallLog::new(), false);
        let ps = vec![passage("x", "ko", "가", 1)];
        let err = t.translate_documents(&ps, Lang::EN, FailurePolicy::FailRun).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
        let (out, stats) = t.translate_documents(&ps, Lang::EN, FailurePolicy::KeepOriginal).unwrap();
        assert_eq!(stats.failed, 1);
        assert_eq!(out[0].text, "가");
        assert!(out[0].translation.as_ref().unwrap().failed);
    }
}
