//! Dense retrieval: embedding, exact top-k search and dot-score reranking.
//!
//! Search is a brute-force scan, so results equal a full argsort of dot
//! products. Ties are broken by ascending document id, which makes every
//! result list a total order and reproducible across runs.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::hash::Hasher;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, CorpusView, Document};
use crate::lang::{format_lang_set, Lang};
use crate::providers::{CrossEncoder, Embedder, ProviderError};
use crate::queries::QueryItem;

pub const DEFAULT_DIM: usize = 512;
pub const MIN_DIM: usize = 16;
pub const DEFAULT_K_RETRIEVE: usize = 50;
pub const DEFAULT_K_CONTEXT: usize = 5;

#[derive(Debug, Clone, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding dimension must be at least {MIN_DIM}, got {0}")]
    InvalidDim(usize),
    #[error("query vector has dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedder failed{}: {source}", doc_id.as_ref().map(|d| format!(" on document `{d}`")).unwrap_or_default())]
    Embedder {
        doc_id: Option<String>,
        #[source]
        source: ProviderError,
    },
    #[error("scope `{scope}` is empty for query language `{lang}`: no `{missing}` documents in corpus")]
    EmptyScope { scope: Scope, lang: Lang, missing: Lang },
    #[error("scope `{scope}` resolves to no documents")]
    NoDocuments { scope: Scope },
    #[error("{0}")]
    Corpus(String),
}

/// Dense embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    values: Vec<f32>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector { values: vec![0.0; dim] }
    }

    /// L2-normalizes `values`; an all-zero input stays zero.
    pub fn normalized(mut values: Vec<f32>) -> Self {
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        Vector { values }
    }

    pub fn from_raw(values: Vec<f32>) -> Self {
        Vector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Zero vectors (from empty text) cannot be indexed.
    pub fn is_indexable(&self) -> bool {
        !self.is_zero()
    }

    /// Dot product accumulated in f64, left to right.
    pub fn dot(&self, other: &Vector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

fn ngram_feature(gram: &str, dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(gram.as_bytes());
    (h.finish() % dim as u64) as usize
}

/// Hashed character n-gram (n = 2, 3) term-frequency embedding.
///
/// Text is lowercased, whitespace runs collapse to one space, and the result
/// is padded with a space on each side so word boundaries form n-grams. Each
/// n-gram increments feature `fnv1a64(utf8) mod dim`. Blank text gives the
/// zero vector.
pub fn embed_text(text: &str, dim: usize) -> Vector {
    let cleaned = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if cleaned.is_empty() {
        return Vector::zeros(dim);
    }
    let chars: Vec<char> = std::iter::once(' ').chain(cleaned.chars()).chain(std::iter::once(' ')).collect();
    let mut tf = vec![0f32; dim];
    let mut gram = String::new();
    for n in 2..=3 {
        for window in chars.windows(n) {
            gram.clear();
            gram.extend(window);
            tf[ngram_feature(&gram, dim)] += 1.0;
        }
    }
    Vector::normalized(tf)
}

/// Local, deterministic embedder backed by [`embed_text`].
#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    dim: usize,
}

impl ReferenceEmbedder {
    pub fn new(dim: usize) -> Result<Self, RetrievalError> {
        if dim < MIN_DIM {
            return Err(RetrievalError::InvalidDim(dim));
        }
        Ok(ReferenceEmbedder { dim })
    }
}

impl Embedder for ReferenceEmbedder {
    fn id(&self) -> String {
        format!("reference-ngram23-fnv1a/{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError> {
        Ok(texts.iter().map(|t| embed_text(t, self.dim)).collect())
    }
}

/// Translation bookkeeping attached to a passage by the document translator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageTranslation {
    pub original_lang: Lang,
    pub translated: bool,
    /// Runtime cache status; not persisted so reruns serialize identically.
    #[serde(skip)]
    pub cached: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

/// One ranked retrieval hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPassage {
    pub doc_id: String,
    pub lang: Lang,
    /// Evidence text: the indexed passage text, or its translation.
    pub text: String,
    pub score: f64,
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<PassageTranslation>,
}

fn by_score_then_id(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

#[derive(Debug, Clone)]
pub struct EmbeddedDocument {
    pub doc: Arc<Document>,
    pub vector: Vector,
}

/// Immutable brute-force index over one scope of a corpus.
#[derive(Debug)]
pub struct VectorIndex {
    dim: usize,
    embedder_id: String,
    scope: BTreeSet<Lang>,
    entries: Vec<EmbeddedDocument>,
    excluded: Vec<String>,
}

const EMBED_BATCH: usize = 64;

/// Embeds every document in the view. Documents embedding to the zero
/// vector are excluded with a warning.
pub fn build_index(view: &CorpusView<'_>, embedder: &dyn Embedder) -> Result<VectorIndex, RetrievalError> {
    let docs: Vec<&Arc<Document>> = view.documents().collect();
    let mut entries = Vec::with_capacity(docs.len());
    let mut excluded = Vec::new();
    for chunk in docs.chunks(EMBED_BATCH) {
        let texts: Vec<String> = chunk.iter().map(|d| d.passage_text()).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vectors = match embedder.embed(&refs) {
            Ok(v) => v,
            Err(_) => {
                // find the offending document
                let mut out = Vec::with_capacity(chunk.len());
                for (doc, text) in chunk.iter().zip(&refs) {
                    let mut v = embedder.embed(&[text]).map_err(|source| RetrievalError::Embedder {
                        doc_id: Some(doc.id.clone()),
                        source,
                    })?;
                    out.push(v.pop().unwrap_or_else(|| Vector::zeros(embedder.dim())));
                }
                out
            }
        };
        for (doc, vector) in chunk.iter().zip(vectors) {
            if vector.dim() != embedder.dim() {
                return Err(RetrievalError::DimensionMismatch { expected: embedder.dim(), got: vector.dim() });
            }
            if !vector.is_indexable() {
                tracing::warn!(doc_id = %doc.id, "document embeds to the zero vector; excluded from index");
                excluded.push(doc.id.clone());
                continue;
            }
            entries.push(EmbeddedDocument { doc: Arc::clone(doc), vector });
        }
    }
    Ok(VectorIndex {
        dim: embedder.dim(),
        embedder_id: embedder.id(),
        scope: view.languages().clone(),
        entries,
        excluded,
    })
}

impl VectorIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn scope(&self) -> &BTreeSet<Lang> {
        &self.scope
    }

    pub fn entries(&self) -> &[EmbeddedDocument] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ids of documents left out because they embedded to zero.
    pub fn excluded(&self) -> &[String] {
        &self.excluded
    }

    /// The `k` entries with highest dot product against `qvec`.
    pub fn search(&self, qvec: &Vector, k: usize) -> Result<Vec<RetrievedPassage>, RetrievalError> {
        if qvec.dim() != self.dim {
            return Err(RetrievalError::DimensionMismatch { expected: self.dim, got: qvec.dim() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(f64, &EmbeddedDocument)> =
            self.entries.iter().map(|e| (qvec.dot(&e.vector), e)).collect();
        let cmp = |a: &(f64, &EmbeddedDocument), b: &(f64, &EmbeddedDocument)| {
            by_score_then_id((a.0, &a.1.doc.id), (b.0, &b.1.doc.id))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, e))| RetrievedPassage {
                doc_id: e.doc.id.clone(),
                lang: e.doc.lang,
                text: e.doc.passage_text(),
                score,
                rank: i + 1,
                translation: None,
            })
            .collect())
    }
}

/// Free-function form of [`VectorIndex::search`].
pub fn search(index: &VectorIndex, qvec: &Vector, k: usize) -> Result<Vec<RetrievedPassage>, RetrievalError> {
    index.search(qvec, k)
}

fn finish_rerank(mut scored: Vec<(f64, RetrievedPassage)>, k2: usize) -> Vec<RetrievedPassage> {
    scored.sort_by(|a, b| by_score_then_id((a.0, &a.1.doc_id), (b.0, &b.1.doc_id)));
    scored
        .into_iter()
        .take(k2)
        .enumerate()
        .map(|(i, (score, mut p))| {
            p.score = score;
            p.rank = i + 1;
            p
        })
        .collect()
}

/// Re-scores candidates by `dot(embed(query), embed(passage))` and keeps the
/// best `k2`. With fewer candidates than `k2` all are returned, re-ranked.
pub fn rerank(
    query_text: &str,
    candidates: &[RetrievedPassage],
    k2: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<RetrievedPassage>, RetrievalError> {
    if candidates.is_empty() || k2 == 0 {
        return Ok(Vec::new());
    }
    let mut texts: Vec<&str> = Vec::with_capacity(candidates.len() + 1);
    texts.push(query_text);
    texts.extend(candidates.iter().map(|c| c.text.as_str()));
    let vectors = embedder
        .embed(&texts)
        .map_err(|source| RetrievalError::Embedder { doc_id: None, source })?;
    let (q, docs) = vectors.split_first().expect("query vector present");
    let scored = docs.iter().zip(candidates).map(|(v, c)| (q.dot(v), c.clone())).collect();
    Ok(finish_rerank(scored, k2))
}

/// Second-stage scorer over a candidate list.
#[derive(Clone)]
pub enum Reranker {
    /// Dot score between query and passage embeddings.
    DotScore,
    CrossEncoder(Arc<dyn CrossEncoder>),
}

impl Reranker {
    pub fn rerank(
        &self,
        query_text: &str,
        candidates: &[RetrievedPassage],
        k2: usize,
        embedder: &dyn Embedder,
    ) -> Result<Vec<RetrievedPassage>, RetrievalError> {
        match self {
            Reranker::DotScore => rerank(query_text, candidates, k2, embedder),
            Reranker::CrossEncoder(ce) => {
                let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
                let scores = ce
                    .score(query_text, &texts)
                    .map_err(|source| RetrievalError::Embedder { doc_id: None, source })?;
                let scored = scores.into_iter().zip(candidates.iter().cloned()).collect();
                Ok(finish_rerank(scored, k2))
            }
        }
    }
}

impl fmt::Debug for Reranker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reranker::DotScore => f.write_str("DotScore"),
            Reranker::CrossEncoder(ce) => write!(f, "CrossEncoder({})", ce.id()),
        }
    }
}

/// Which language buckets a retrieval draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    #[serde(rename = "sl")]
    Sl,
    #[serde(rename = "en")]
    En,
    #[serde(rename = "en+sl")]
    EnPlusSl,
    #[serde(rename = "all")]
    All,
}

impl Scope {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scope::Sl => "sl",
            Scope::En => "en",
            Scope::EnPlusSl => "en+sl",
            Scope::All => "all",
        }
    }

    /// Resolves to concrete languages for a query in `query_lang`. Every
    /// named language must have a non-empty bucket; `All` takes the
    /// populated buckets.
    pub fn resolve(&self, query_lang: Lang, corpus: &Corpus) -> Result<BTreeSet<Lang>, RetrievalError> {
        let langs: BTreeSet<Lang> = match self {
            Scope::Sl => [query_lang].into(),
            Scope::En => [Lang::EN].into(),
            Scope::EnPlusSl => [Lang::EN, query_lang].into(),
            Scope::All => {
                let populated = corpus.populated_languages();
                if populated.is_empty() {
                    return Err(RetrievalError::NoDocuments { scope: *self });
                }
                return Ok(populated);
            }
        };
        for &l in &langs {
            if corpus.bucket_len(l) == 0 {
                return Err(RetrievalError::EmptyScope { scope: *self, lang: query_lang, missing: l });
            }
        }
        Ok(langs)
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "+").as_str() {
            "sl" => Ok(Scope::Sl),
            "en" => Ok(Scope::En),
            "en+sl" | "en-sl" => Ok(Scope::EnPlusSl),
            "all" => Ok(Scope::All),
            other => Err(format!("unknown scope `{other}` (expected sl, en, en+sl or all)")),
        }
    }
}

const INDEX_MAGIC: &[u8; 8] = b"XLRGIDX\0";
const INDEX_VERSION: u8 = 1;

type IndexSlot = OnceLock<Result<Arc<VectorIndex>, RetrievalError>>;

/// Lazily built indices keyed by (corpus, scope, embedder, dim).
///
/// Concurrent requests for one key wait for a single build. With a
/// directory, built indices persist as `<key>.idx` files:
///
/// ```text
/// magic "XLRGIDX\0" | version u8 | dim u32 | corpus hash [u8; 64]
/// | embedder id (u32 len + utf8) | count u32
/// | count × (doc id (u32 len + utf8) | dim × f32)
/// ```
///
/// All integers and floats are little-endian.
#[derive(Debug, Default)]
pub struct IndexCache {
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<String, Arc<IndexSlot>>>,
    builds: Mutex<usize>,
}

impl IndexCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: &Path) -> Self {
        IndexCache { dir: Some(dir.to_path_buf()), ..Self::default() }
    }

    /// Number of indices embedded from scratch (not loaded from disk).
    pub fn builds(&self) -> usize {
        *self.builds.lock().unwrap()
    }

    pub fn key(corpus: &Corpus, langs: &BTreeSet<Lang>, embedder: &dyn Embedder) -> String {
        let mut h = Sha256::new();
        h.update(corpus.content_hash().as_bytes());
        h.update(b"|");
        h.update(format_lang_set(langs).as_bytes());
        h.update(b"|");
        h.update(embedder.id().as_bytes());
        h.update(b"|");
        h.update(embedder.dim().to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn index_path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.idx")))
    }

    pub fn get_or_build(
        &self,
        corpus: &Corpus,
        langs: &BTreeSet<Lang>,
        embedder: &dyn Embedder,
    ) -> Result<Arc<VectorIndex>, RetrievalError> {
        let key = Self::key(corpus, langs, embedder);
        let slot = Arc::clone(self.slots.lock().unwrap().entry(key.clone()).or_default());
        slot.get_or_init(|| {
            if let Some(path) = self.index_path(&key) {
                if path.exists() {
                    match read_index(&path, corpus, langs, embedder) {
                        Ok(index) => return Ok(Arc::new(index)),
                        Err(e) => tracing::warn!(path = %path.display(), error = %e, "ignoring unreadable index file"),
                    }
                }
            }
            let view = corpus.restrict(langs).map_err(|e| RetrievalError::Corpus(e.to_string()))?;
            let index = build_index(&view, embedder)?;
            *self.builds.lock().unwrap() += 1;
            if let Some(path) = self.index_path(&key) {
                if let Err(e) = write_index(&path, &index, corpus) {
                    tracing::warn!(path = %path.display(), error = %e, "failed to persist index");
                }
            }
            Ok(Arc::new(index))
        })
        .clone()
    }
}

pub fn write_index(path: &Path, index: &VectorIndex, corpus: &Corpus) -> std::io::Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(INDEX_MAGIC);
    buf.push(INDEX_VERSION);
    buf.extend_from_slice(&(index.dim as u32).to_le_bytes());
    buf.extend_from_slice(corpus.content_hash().as_bytes());
    buf.extend_from_slice(&(index.embedder_id.len() as u32).to_le_bytes());
    buf.extend_from_slice(index.embedder_id.as_bytes());
    buf.extend_from_slice(&(index.entries.len() as u32).to_le_bytes());
    for e in &index.entries {
        buf.extend_from_slice(&(e.doc.id.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.doc.id.as_bytes());
        for v in e.vector.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    crate::providers::cache::write_atomic(path, &buf)
}

fn invalid(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

pub fn read_index(
    path: &Path,
    corpus: &Corpus,
    langs: &BTreeSet<Lang>,
    embedder: &dyn Embedder,
) -> std::io::Result<VectorIndex> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = bytes.as_slice();
    let mut take = |n: usize| -> std::io::Result<&[u8]> {
        if r.len() < n {
            return Err(invalid("truncated index file"));
        }
        let (head, tail) = r.split_at(n);
        r = tail;
        Ok(head)
    };
    if take(8)? != INDEX_MAGIC {
        return Err(invalid("bad magic"));
    }
    if take(1)?[0] != INDEX_VERSION {
        return Err(invalid("unsupported index version"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
    let dim = u32_at(take(4)?);
    if dim != embedder.dim() {
        return Err(invalid("dimension mismatch"));
    }
    if take(64)? != corpus.content_hash().as_bytes() {
        return Err(invalid("corpus hash mismatch"));
    }
    let id_len = u32_at(take(4)?);
    let embedder_id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| invalid("bad embedder id"))?;
    if embedder_id != embedder.id() {
        return Err(invalid("embedder mismatch"));
    }
    let count = u32_at(take(4)?);
    let by_id: HashMap<&str, &Arc<Document>> = corpus.documents().iter().map(|d| (d.id.as_str(), d)).collect();
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(take(4)?);
        let id = std::str::from_utf8(take(len)?).map_err(|_| invalid("bad doc id"))?;
        let doc = by_id.get(id).ok_or_else(|| invalid(format!("unknown doc id {id}")))?;
        if !langs.contains(&doc.lang) {
            return Err(invalid("document outside index scope"));
        }
        let raw = take(dim * 4)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        entries.push(EmbeddedDocument { doc: Arc::clone(doc), vector: Vector::from_raw(values) });
    }
    if !r.is_empty() {
        return Err(invalid("trailing bytes"));
    }
    Ok(VectorIndex { dim, embedder_id, scope: langs.clone(), entries, excluded: Vec::new() })
}

/// Output of [`retrieve_for_query`].
#[derive(Debug, Clone)]
pub struct Retrieval {
    pub passages: Vec<RetrievedPassage>,
    pub resolved_scope: BTreeSet<Lang>,
    /// Size of the first-stage candidate list.
    pub candidates: usize,
    /// Languages of the first-stage candidates.
    pub candidate_langs: std::collections::BTreeMap<Lang, usize>,
    /// Fewer than `k_context` passages survived.
    pub short: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct RetrievalDepths {
    pub k_retrieve: usize,
    pub k_context: usize,
}

impl Default for RetrievalDepths {
    fn default() -> Self {
        RetrievalDepths { k_retrieve: DEFAULT_K_RETRIEVE, k_context: DEFAULT_K_CONTEXT }
    }
}

/// Retrieves with `query_text` (which may differ from the query's own
/// question, e.g. after translation) over the scope resolved for the query's
/// language: search for `k_retrieve` candidates, then rerank to `k_context`.
#[allow(clippy::too_many_arguments)]
pub fn retrieve_for_query(
    query: &QueryItem,
    query_text: &str,
    corpus: &Corpus,
    scope: Scope,
    depths: RetrievalDepths,
    embedder: &dyn Embedder,
    reranker: &Reranker,
    cache: &IndexCache,
) -> Result<Retrieval, RetrievalError> {
    let langs = scope.resolve(query.lang, corpus)?;
    let index = cache.get_or_build(corpus, &langs, embedder)?;
    let qvec = embedder
        .embed(&[query_text])
        .map_err(|source| RetrievalError::Embedder { doc_id: None, source })?
        .pop()
        .ok_or_else(|| RetrievalError::Embedder { doc_id: None, source: ProviderError::Other("no query vector".into()) })?;
    let candidates = index.search(&qvec, depths.k_retrieve)?;
    let passages = reranker.rerank(query_text, &candidates, depths.k_context, embedder)?;
    let short = passages.len() < depths.k_context;
    if short {
        tracing::debug!(query = %query.id, got = passages.len(), want = depths.k_context, "short evidence list");
    }
    let mut candidate_langs = std::collections::BTreeMap::new();
    for c in &candidates {
        *candidate_langs.entry(c.lang).or_insert(0) += 1;
    }
    Ok(Retrieval { passages, resolved_scope: langs, candidates: candidates.len(), candidate_langs, short })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_lang_set;
    use std::io::Write;

    fn doc(id: &str, lang: &str, text: &str) -> Document {
        Document { id: id.into(), lang: lang.parse().unwrap(), title: String::new(), text: text.into(), source: "t".into() }
    }

    fn small_corpus() -> Corpus {
        Corpus::from_documents(
            "small",
            parse_lang_set("en,de,ko").unwrap(),
            vec![
                doc("a", "en", "Barbie Girl is a song by Aqua."),
                doc("b", "de", "Barbie Girl ist ein Lied der Band Aqua."),
                doc("c", "ko", "바비 걸은 아쿠아의 노래이다."),
                doc("d", "en", "Eight queens ruled the Kingdom of England."),
            ],
        )
        .unwrap()
    }

    #[test]
    fn embed_is_deterministic_and_unit_norm() {
        let a = embed_text("cat", 512);
        assert_eq!(a, embed_text("cat", 512));
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!((embed_text("x", 64).norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blank_text_is_flagged_zero() {
        for t in ["", "   \n\t"] {
            let v = embed_text(t, 512);
            assert!(v.is_zero());
            assert!(!v.is_indexable());
            assert_eq!(v.dim(), 512);
        }
    }

    #[test]
    fn small_dim_rejected() {
        assert!(matches!(ReferenceEmbedder::new(8), Err(RetrievalError::InvalidDim(8))));
        assert!(ReferenceEmbedder::new(16).is_ok());
    }

    #[test]
    fn search_edges() {
        let corpus = small_corpus();
        let e = ReferenceEmbedder::new(256).unwrap();
        let index = build_index(&corpus.full_view(), &e).unwrap();
        assert_eq!(index.len(), 4);
        let q = embed_text("who sang barbie girl", 256);
        assert!(index.search(&q, 0).unwrap().is_empty());
        let all = index.search(&q, 10).unwrap();
        assert_eq!(all.len(), 4);
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(all.iter().map(|p| p.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(matches!(
            index.search(&embed_text("x", 128), 3),
            Err(RetrievalError::DimensionMismatch { expected: 256, got: 128 })
        ));
    }

    #[test]
    fn ties_break_by_id() {
        let corpus = Corpus::from_documents(
            "ties",
            parse_lang_set("en").unwrap(),
            vec![doc("z", "en", "same text"), doc("m", "en", "same text"), doc("a", "en", "same text")],
        )
        .unwrap();
        let e = ReferenceEmbedder::new(64).unwrap();
        let index = build_index(&corpus.full_view(), &e).unwrap();
        let hits = index.search(&embed_text("same text", 64), 3).unwrap();
        assert_eq!(hits.iter().map(|h| h.doc_id.as_str()).collect::<Vec<_>>(), vec!["a", "m", "z"]);
    }

    #[test]
    fn rerank_fixed_point_and_k1() {
        let corpus = small_corpus();
        let e = ReferenceEmbedder::new(256).unwrap();
        let index = build_index(&corpus.full_view(), &e).unwrap();
        let q = "who sang barbie girl";
        let hits = index.search(&embed_text(q, 256), 4).unwrap();
        let reranked = rerank(q, &hits, 4, &e).unwrap();
        assert_eq!(hits, reranked);
        let one = rerank(q, &hits, 1, &e).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].doc_id, hits[0].doc_id);
        assert_eq!(one[0].rank, 1);
        // k2 beyond length returns everything
        assert_eq!(rerank(q, &hits[..2], 5, &e).unwrap().len(), 2);
    }

    struct ZeroForEmpty;
    impl Embedder for ZeroForEmpty {
        fn id(&self) -> String {
            "zero-stub".into()
        }
        fn dim(&self) -> usize {
            16
        }
        fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError> {
            Ok(texts
                .iter()
                .map(|t| if t.contains("void") { Vector::zeros(16) } else { embed_text(t, 16) })
                .collect())
        }
    }

    struct Failing;
    impl Embedder for Failing {
        fn id(&self) -> String {
            "failing".into()
        }
        fn dim(&self) -> usize {
            16
        }
        fn embed(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError> {
            if texts.iter().any(|t| t.contains("England")) {
                Err(ProviderError::Other("boom".into()))
            } else {
                Ok(texts.iter().map(|t| embed_text(t, 16)).collect())
            }
        }
    }

    #[test]
    fn zero_vector_documents_are_excluded() {
        let corpus = Corpus::from_documents(
            "z",
            parse_lang_set("en").unwrap(),
            vec![doc("a", "en", "real text"), doc("b", "en", "void")],
        )
        .unwrap();
        let index = build_index(&corpus.full_view(), &ZeroForEmpty).unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(index.excluded(), ["b".to_string()]);
    }

    #[test]
    fn embedder_failure_names_document() {
        let err = build_index(&small_corpus().full_view(), &Failing).unwrap_err();
        match err {
            RetrievalError::Embedder { doc_id, .. } => assert_eq!(doc_id.as_deref(), Some("d")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scope_resolution() {
        let corpus = small_corpus();
        let ko: Lang = "ko".parse().unwrap();
        let fi: Lang = "fi".parse().unwrap();
        assert_eq!(Scope::Sl.resolve(ko, &corpus).unwrap(), [ko].into());
        assert_eq!(Scope::EnPlusSl.resolve(ko, &corpus).unwrap(), [Lang::EN, ko].into());
        assert_eq!(Scope::All.resolve(ko, &corpus).unwrap().len(), 3);
        let err = Scope::Sl.resolve(fi, &corpus).unwrap_err();
        assert!(err.to_string().contains("fi"), "{err}");
        assert_eq!("en+sl".parse::<Scope>().unwrap(), Scope::EnPlusSl);
        assert!("everything".parse::<Scope>().is_err());
    }

    #[test]
    fn index_file_round_trip() {
        let corpus = small_corpus();
        let e = ReferenceEmbedder::new(32).unwrap();
        let langs = corpus.languages().clone();
        let index = build_index(&corpus.restrict(&langs).unwrap(), &e).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.idx");
        write_index(&path, &index, &corpus).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], INDEX_MAGIC);
        assert_eq!(bytes[8], INDEX_VERSION);
        let back = read_index(&path, &corpus, &langs, &e).unwrap();
        assert_eq!(back.len(), index.len());
        for (a, b) in back.entries().iter().zip(index.entries()) {
            assert_eq!(a.doc.id, b.doc.id);
            assert_eq!(a.vector, b.vector);
        }
        // wrong embedder is refused
        let other = ReferenceEmbedder::new(64).unwrap();
        assert!(read_index(&path, &corpus, &langs, &other).is_err());
        // corrupted file is refused
        let mut f = fs::OpenOptions::new().write(true).open(&path).unwrap();
        f.write_all(b"NOTANIDX").unwrap();
        assert!(read_index(&path, &corpus, &langs, &e).is_err());
    }

    #[test]
    fn index_cache_builds_once_and_reloads_from_disk() {
        let corpus = small_corpus();
        let e = ReferenceEmbedder::new(32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let langs = parse_lang_set("en,de").unwrap();
        let cache = IndexCache::with_dir(dir.path());
        let a = cache.get_or_build(&corpus, &langs, &e).unwrap();
        let b = cache.get_or_build(&corpus, &langs, &e).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.builds(), 1);
        let fresh = IndexCache::with_dir(dir.path());
        let c = fresh.get_or_build(&corpus, &langs, &e).unwrap();
        assert_eq!(fresh.builds(), 0);
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn concurrent_requests_share_one_build() {
        let corpus = Arc::new(small_corpus());
        let cache = Arc::new(IndexCache::in_memory());
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (corpus, cache) = (corpus.clone(), cache.clone());
                std::thread::spawn(move || {
                    let e = ReferenceEmbedder::new(32).unwrap();
                    cache.get_or_build(&corpus, corpus.languages(), &e).unwrap().len()
                })
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), 4);
        }
        assert_eq!(cache.builds(), 1);
    }
}
