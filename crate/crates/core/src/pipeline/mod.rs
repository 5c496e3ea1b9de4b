//! Strategy orchestration: retrieval scope, query and document
//! translation, evidence ordering, prompting and answer parsing.
//!
//! | strategy | retrieval query | scope          | evidence        |
//! |----------|-----------------|----------------|-----------------|
//! | MONO     | original        | SL             | SL              |
//! | TRAG     | translated (en) | EN             | en              |
//! | MULTI    | original        | EN+SL or ALL   | mixed           |
//! | CROSS    | original        | EN+SL or ALL   | translated (en) |

pub mod prompt;
pub mod stack;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::lang::Lang;
use crate::providers::{Embedder, GenerationParams, LlmProvider, ProviderError};
use crate::queries::QueryItem;
use crate::retrieval::{
    retrieve_for_query, IndexCache, Reranker, RetrievalDepths, RetrievalError, RetrievedPassage, Scope,
    DEFAULT_K_CONTEXT, DEFAULT_K_RETRIEVE,
};
use crate::translation::{FailurePolicy, TranslationError, Translator};

pub use prompt::{build_prompt, Prompt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Strategy {
    Mono,
    Trag,
    Multi,
    Cross,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Mono, Strategy::Trag, Strategy::Multi, Strategy::Cross];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Mono => "MONO",
            Strategy::Trag => "TRAG",
            Strategy::Multi => "MULTI",
            Strategy::Cross => "CROSS",
        }
    }

    pub fn default_scope(&self) -> Scope {
        match self {
            Strategy::Mono => Scope::Sl,
            Strategy::Trag => Scope::En,
            Strategy::Multi | Strategy::Cross => Scope::All,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mono" | "monorag" => Ok(Strategy::Mono),
            "trag" => Ok(Strategy::Trag),
            "multi" | "multirag" => Ok(Strategy::Multi),
            "cross" | "crossrag" => Ok(Strategy::Cross),
            other => Err(format!("unknown strategy `{other}` (expected mono, trag, multi or cross)")),
        }
    }
}

/// Evidence reordering applied after retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Perturb {
    #[default]
    Original,
    RandomShuffle,
    EnFirst,
    EnLast,
}

impl Perturb {
    pub const ALL: [Perturb; 4] = [Perturb::Original, Perturb::RandomShuffle, Perturb::EnFirst, Perturb::EnLast];

    pub fn as_str(&self) -> &'static str {
        match self {
            Perturb::Original => "ORIGINAL",
            Perturb::RandomShuffle => "RANDOM_SHUFFLE",
            Perturb::EnFirst => "EN_FIRST",
            Perturb::EnLast => "EN_LAST",
        }
    }
}

impl fmt::Display for Perturb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Perturb {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "original" => Ok(Perturb::Original),
            "random_shuffle" | "shuffle" => Ok(Perturb::RandomShuffle),
            "en_first" => Ok(Perturb::EnFirst),
            "en_last" => Ok(Perturb::EnLast),
            other => Err(format!("unknown perturbation `{other}`")),
        }
    }
}

/// Question language used in TRAG prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptLang {
    /// The original question.
    #[default]
    Sl,
    /// The English translation used for retrieval.
    En,
}

impl FromStr for PromptLang {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sl" => Ok(PromptLang::Sl),
            "en" => Ok(PromptLang::En),
            other => Err(format!("unknown prompt language `{other}` (expected sl or en)")),
        }
    }
}

/// Effective answer language: always the query's own.
pub const ANSWER_LANGUAGE: &str = "query-language";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub scope: Scope,
    pub k_retrieve: usize,
    pub k_context: usize,
    pub translator_id: String,
    pub llm_id: String,
    pub perturb: Perturb,
    pub seed: u64,
    pub trag_prompt_lang: PromptLang,
    pub annotate_evidence_lang: bool,
    pub translation_failure: FailurePolicy,
    pub generation: GenerationParams,
    /// Run label used in reports; defaults to the strategy name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid strategy config: {0}")]
    Config(String),
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("{stage}: {source}")]
    Translation {
        stage: &'static str,
        #[source]
        source: TranslationError,
    },
    #[error("generation: {0}")]
    Generation(#[source] ProviderError),
}

impl PipelineError {
    /// True when an external service (or its cache) is at fault rather
    /// than the configuration or data.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            PipelineError::Config(_) => false,
            PipelineError::Retrieval(RetrievalError::Embedder { .. }) => true,
            PipelineError::Retrieval(_) => false,
            PipelineError::Translation { .. } | PipelineError::Generation(_) => true,
        }
    }
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        StrategyConfig {
            strategy,
            scope: strategy.default_scope(),
            k_retrieve: DEFAULT_K_RETRIEVE,
            k_context: DEFAULT_K_CONTEXT,
            translator_id: "mock".into(),
            llm_id: "mock".into(),
            perturb: Perturb::Original,
            seed: 0,
            trag_prompt_lang: PromptLang::Sl,
            annotate_evidence_lang: false,
            translation_failure: FailurePolicy::FailRun,
            generation: GenerationParams::default(),
            label: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.strategy.to_string())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let ok = match self.strategy {
            Strategy::Mono => self.scope == Scope::Sl,
            Strategy::Trag => self.scope == Scope::En,
            Strategy::Multi | Strategy::Cross => matches!(self.scope, Scope::EnPlusSl | Scope::All),
        };
        if !ok {
            return Err(PipelineError::Config(format!("strategy {} cannot use scope `{}`", self.strategy, self.scope)));
        }
        if self.k_context == 0 {
            return Err(PipelineError::Config("k_context must be positive".into()));
        }
        if self.k_retrieve < self.k_context {
            return Err(PipelineError::Config(format!(
                "k_retrieve ({}) must be at least k_context ({})",
                self.k_retrieve, self.k_context
            )));
        }
        Ok(())
    }
}

/// Keys accepted by [`StrategyConfig::set`].
pub const CONFIG_KEYS: [&str; 14] = [
    "strategy",
    "scope",
    "k_retrieve",
    "k_context",
    "translator_id",
    "llm_id",
    "perturb",
    "seed",
    "trag_prompt_lang",
    "annotate_evidence_lang",
    "translation_failure",
    "temperature",
    "max_tokens",
    "label",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| PipelineError::Config(format!("{key} = `{value}`: {e}")))
}

impl StrategyConfig {
    /// Sets one field from its flat `key = value` form. Setting `strategy`
    /// also resets `scope` to that strategy's default.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        match key {
            "strategy" => {
                self.strategy = parse_value(key, value)?;
                self.scope = self.strategy.default_scope();
            }
            "scope" => self.scope = parse_value(key, value)?,
            "k_retrieve" => self.k_retrieve = parse_value(key, value)?,
            "k_context" => self.k_context = parse_value(key, value)?,
            "translator_id" => self.translator_id = value.to_string(),
            "llm_id" => self.llm_id = value.to_string(),
            "perturb" => self.perturb = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "trag_prompt_lang" => self.trag_prompt_lang = parse_value(key, value)?,
            "annotate_evidence_lang" => self.annotate_evidence_lang = parse_value(key, value)?,
            "translation_failure" => self.translation_failure = parse_value(key, value)?,
            "temperature" => self.generation.temperature = parse_value(key, value)?,
            "max_tokens" => self.generation.max_tokens = parse_value(key, value)?,
            "label" => self.label = Some(value.to_string()),
            other => return Err(PipelineError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Builds a config from flat pairs; `strategy` is applied first so an
    /// explicit `scope` always wins over the strategy default.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, PipelineError> {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
        let strategy = pairs
            .iter()
            .rev()
            .find(|(k, _)| *k == "strategy")
            .ok_or_else(|| PipelineError::Config("missing `strategy`".into()))?;
        let mut config = StrategyConfig::new(parse_value("strategy", strategy.1)?);
        for (k, v) in pairs.iter().filter(|(k, _)| *k != "strategy") {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Flat `key = value` view, the inverse of [`StrategyConfig::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("strategy", self.strategy.to_string()),
            ("scope", self.scope.to_string()),
            ("k_retrieve", self.k_retrieve.to_string()),
            ("k_context", self.k_context.to_string()),
            ("translator_id", self.translator_id.clone()),
            ("llm_id", self.llm_id.clone()),
            ("perturb", self.perturb.to_string()),
            ("seed", self.seed.to_string()),
            ("trag_prompt_lang", match self.trag_prompt_lang {
                PromptLang::Sl => "sl".into(),
                PromptLang::En => "en".into(),
            }),
            ("annotate_evidence_lang", self.annotate_evidence_lang.to_string()),
            ("translation_failure", match self.translation_failure {
                FailurePolicy::FailRun => "fail-run".into(),
                FailurePolicy::KeepOriginal => "keep-original".into(),
            }),
            ("temperature", self.generation.temperature.to_string()),
            ("max_tokens", self.generation.max_tokens.to_string()),
        ];
        if let Some(l) = &self.label {
            out.push(("label", l.clone()));
        }
        out
    }
}

/// Seed for one query's shuffle, derived from the run seed and query id so
/// that queries get distinct but reproducible permutations.
pub fn query_seed(run_seed: u64, query_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(query_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Reorders passages; never adds or drops any.
pub fn perturb_order(passages: &[RetrievedPassage], mode: Perturb, seed: u64) -> Vec<RetrievedPassage> {
    let mut out = passages.to_vec();
    match mode {
        Perturb::Original => {}
        Perturb::RandomShuffle => out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        Perturb::EnFirst => out.sort_by_key(|p| p.lang != Lang::EN),
        Perturb::EnLast => out.sort_by_key(|p| p.lang == Lang::EN),
    }
    out
}

fn answer_markers() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)the answer is\s*:|answer\s*:|答案是\s*[:：]|정답은").expect("valid regex"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub text: String,
    pub parse_failed: bool,
}

/// Text after the last answer marker, trimmed. Without a marker the whole
/// trimmed output is returned and flagged.
pub fn parse_answer(raw: &str) -> ParsedAnswer {
    match answer_markers().find_iter(raw).last() {
        Some(m) => ParsedAnswer { text: raw[m.end()..].trim().to_string(), parse_failed: false },
        None => ParsedAnswer { text: raw.trim().to_string(), parse_failed: true },
    }
}

/// Services a pipeline run draws on.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    pub translator: Arc<Translator>,
    pub llm: Arc<dyn LlmProvider>,
    pub reranker: Reranker,
    pub index_cache: Arc<IndexCache>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultFlags {
    /// Fewer than `k_context` passages reached the prompt.
    pub short_evidence: bool,
    pub no_evidence: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTranslation {
    pub calls: usize,
    /// Not persisted; the call log records cache status.
    #[serde(skip)]
    pub cache_hits: usize,
}

/// Per-stage bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub resolved_scope: BTreeSet<Lang>,
    /// TRAG: the English query used for retrieval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translated_query: Option<String>,
    pub query_translation: StageTranslation,
    pub document_translation: StageTranslation,
    /// CROSS translates title and body together, as shown to the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document_translation_unit: Option<String>,
    pub candidates: usize,
    pub shuffle_seed: u64,
    /// Wall-clock milliseconds per stage; not persisted, so outputs stay
    /// byte-reproducible.
    #[serde(skip)]
    pub timings_ms: BTreeMap<&'static str, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub query_id: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub prompt: Prompt,
    pub raw_output: String,
    pub parsed_answer: String,
    pub parse_failed: bool,
    /// Evidence in prompt order.
    pub retrieved: Vec<RetrievedPassage>,
    pub candidate_langs: BTreeMap<Lang, usize>,
    pub flags: ResultFlags,
    pub provenance: Provenance,
}

impl PipelineResult {
    /// Original languages of the evidence passages.
    pub fn retrieved_lang_histogram(&self) -> BTreeMap<Lang, usize> {
        let mut h = BTreeMap::new();
        for p in &self.retrieved {
            let l = p.translation.as_ref().map_or(p.lang, |t| t.original_lang);
            *h.entry(l).or_insert(0) += 1;
        }
        h
    }
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

pub fn run_strategy(
    config: &StrategyConfig,
    query: &QueryItem,
    corpus: &Corpus,
    providers: &Providers,
) -> Result<PipelineResult, PipelineError> {
    config.validate()?;
    let mut prov = Provenance::default();

    let t = Instant::now();
    let retrieval_query = if config.strategy == Strategy::Trag {
        let res = providers
            .translator
            .translate(&query.question, Some(query.lang), Lang::EN)
            .map_err(|source| PipelineError::Translation { stage: "query translation", source })?;
        prov.query_translation =
            StageTranslation { calls: usize::from(query.lang != Lang::EN), cache_hits: usize::from(res.cached) };
        prov.translated_query = Some(res.text.clone());
        res.text
    } else {
        query.question.clone()
    };
    prov.timings_ms.insert("query_translation", elapsed_ms(t));

    let t = Instant::now();
    let depths = RetrievalDepths { k_retrieve: config.k_retrieve, k_context: config.k_context };
    let retrieval = retrieve_for_query(
        query,
        &retrieval_query,
        corpus,
        config.scope,
        depths,
        providers.embedder.as_ref(),
        &providers.reranker,
        &providers.index_cache,
    )?;
    prov.timings_ms.insert("retrieval", elapsed_ms(t));
    prov.resolved_scope = retrieval.resolved_scope.clone();
    prov.candidates = retrieval.candidates;

    let t = Instant::now();
    let mut passages = retrieval.passages;
    if config.strategy == Strategy::Cross && !passages.is_empty() {
        let (translated, stats) = providers
            .translator
            .translate_documents(&passages, Lang::EN, config.translation_failure)
            .map_err(|source| PipelineError::Translation { stage: "document translation", source })?;
        prov.document_translation = StageTranslation { calls: stats.translated, cache_hits: stats.cache_hits };
        prov.document_translation_unit = Some("title+body".into());
        passages = translated;
    }
    prov.timings_ms.insert("document_translation", elapsed_ms(t));

    let shuffle_seed = query_seed(config.seed, &query.id);
    prov.shuffle_seed = shuffle_seed;
    let passages = perturb_order(&passages, config.perturb, shuffle_seed);

    let question = match (config.strategy, config.trag_prompt_lang, &prov.translated_query) {
        (Strategy::Trag, PromptLang::En, Some(q)) => q.clone(),
        _ => query.question.clone(),
    };
    let prompt = build_prompt(&question, &passages, query.lang).with_language_annotations(config.annotate_evidence_lang);

    let t = Instant::now();
    let raw_output = providers.llm.generate(&prompt.render(), &config.generation).map_err(PipelineError::Generation)?;
    prov.timings_ms.insert("generation", elapsed_ms(t));
    let parsed = parse_answer(&raw_output);

    let flags = ResultFlags { short_evidence: retrieval.short, no_evidence: passages.is_empty() };
    if flags.no_evidence {
        tracing::warn!(query = %query.id, "no passages retrieved; prompting without evidence");
    }
    Ok(PipelineResult {
        query_id: query.id.clone(),
        strategy: config.strategy,
        seed: config.seed,
        prompt,
        raw_output,
        parsed_answer: parsed.text,
        parse_failed: parsed.parse_failed,
        retrieved: passages,
        candidate_langs: retrieval.candidate_langs,
        flags,
        provenance: prov,
    })
}

/// Runs every query, `parallelism` at a time, returning results ordered by
/// query id.
pub fn run_queries(
    config: &StrategyConfig,
    queries: &[QueryItem],
    corpus: &Corpus,
    providers: &Providers,
    parallelism: usize,
) -> Vec<(QueryItem, Result<PipelineResult, PipelineError>)> {
    let mut sorted: Vec<&QueryItem> = queries.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let run = || {
        sorted
            .par_iter()
            .map(|q| ((*q).clone(), run_strategy(config, q, corpus, providers)))
            .collect::<Vec<_>>()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: &str, lang: &str) -> RetrievedPassage {
        RetrievedPassage { doc_id: id.into(), lang: lang.parse().unwrap(), text: id.into(), score: 0.0, rank: 0, translation: None }
    }

    fn ids(ps: &[RetrievedPassage]) -> Vec<&str> {
        ps.iter().map(|p| p.doc_id.as_str()).collect()
    }

    #[test]
    fn perturb_modes() {
        let ps = vec![p("k1", "ko"), p("e1", "en"), p("k2", "ko"), p("e2", "en"), p("k3", "ko")];
        assert_eq!(perturb_order(&ps, Perturb::Original, 1), ps);
        assert_eq!(ids(&perturb_order(&ps, Perturb::EnFirst, 1)), ["e1", "e2", "k1", "k2", "k3"]);
        assert_eq!(ids(&perturb_order(&ps, Perturb::EnLast, 1)), ["k1", "k2", "k3", "e1", "e2"]);
        let a = perturb_order(&ps, Perturb::RandomShuffle, 42);
        assert_eq!(a, perturb_order(&ps, Perturb::RandomShuffle, 42));
        let mut sorted = ids(&a);
        sorted.sort();
        assert_eq!(sorted, ["e1", "e2", "k1", "k2", "k3"]);
    }

    #[test]
    fn parse_answer_examples() {
        assert_eq!(parse_answer("Thus, England has had 8 queens.\nThe answer is: Aqua.").text, "Aqua.");
        assert_eq!(parse_answer("Answer: 8"), ParsedAnswer { text: "8".into(), parse_failed: false });
        assert_eq!(parse_answer("Mozart wrote it"), ParsedAnswer { text: "Mozart wrote it".into(), parse_failed: true });
        assert_eq!(parse_answer("英格兰曾有8位女王作为君主执政....答案是：8").text, "8");
        assert_eq!(parse_answer("정답은 Aqua").text, "Aqua");
        assert_eq!(parse_answer("answer: first. ANSWER: second").text, "second");
    }

    #[test]
    fn config_invariants() {
        assert!(StrategyConfig::new(Strategy::Mono).validate().is_ok());
        let mut c = StrategyConfig::new(Strategy::Mono);
        c.scope = Scope::All;
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
        let mut c = StrategyConfig::new(Strategy::Trag);
        c.scope = Scope::Sl;
        assert!(c.validate().is_err());
        let mut c = StrategyConfig::new(Strategy::Cross);
        c.scope = Scope::EnPlusSl;
        assert!(c.validate().is_ok());
        c.scope = Scope::Sl;
        assert!(c.validate().is_err());
        let mut c = StrategyConfig::new(Strategy::Multi);
        c.k_retrieve = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn query_seeds_differ_per_query() {
        assert_eq!(query_seed(7, "q1"), query_seed(7, "q1"));
        assert_ne!(query_seed(7, "q1"), query_seed(7, "q2"));
        assert_ne!(query_seed(7, "q1"), query_seed(8, "q1"));
    }
}
