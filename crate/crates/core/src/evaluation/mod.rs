//! Answer scoring, language identification and report aggregation.
//!
//! Every string comparison goes through [`normalize`]: NFKC, full case
//! folding, NFKC again (folding can produce non-NFKC sequences), Unicode
//! punctuation replaced by spaces, whitespace collapsed. There is no word
//! tokenization, so the same rules apply to Latin, CJK and Thai text.

pub mod langid;
pub mod report;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

use crate::lang::Lang;
use crate::pipeline::{PipelineResult, Strategy};
use crate::queries::QueryItem;

pub use langid::{detect_language, Profiles};
pub use report::{aggregate, language_mix, LanguageMix, Report};

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

pub fn normalize(text: &str) -> String {
    let folded: String = caseless::default_case_fold_str(&text.nfkc().collect::<String>()).nfkc().collect();
    let spaced: String = folded.chars().map(|c| if is_punctuation(c) { ' ' } else { c }).collect();
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1 when some normalized gold occurs inside the normalized prediction.
pub fn flexible_em(prediction: &str, golds: &[String]) -> u8 {
    let pred = normalize(prediction);
    u8::from(golds.iter().any(|g| {
        let g = normalize(g);
        !g.is_empty() && pred.contains(&g)
    }))
}

fn trigrams(s: &str) -> HashMap<&str, usize> {
    let bounds: Vec<usize> = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len())).collect();
    let mut out = HashMap::new();
    for w in bounds.windows(4) {
        *out.entry(&s[w[0]..w[3]]).or_insert(0) += 1;
    }
    out
}

/// Clipped character 3-gram recall of a gold against the prediction, max
/// over golds. Golds shorter than three characters after normalization
/// score by containment instead.
pub fn char_3gram_recall(prediction: &str, golds: &[String]) -> f64 {
    let pred = normalize(prediction);
    let pred_grams = trigrams(&pred);
    golds
        .iter()
        .map(|g| {
            let g = normalize(g);
            let len = g.chars().count();
            if len == 0 {
                return 0.0;
            }
            if len < 3 {
                return if pred.contains(&g) { 1.0 } else { 0.0 };
            }
            let gold_grams = trigrams(&g);
            let hit: usize = gold_grams.iter().map(|(k, &n)| n.min(pred_grams.get(k).copied().unwrap_or(0))).sum();
            hit as f64 / (len - 2) as f64
        })
        .fold(0.0, f64::max)
}

/// Resource class of a language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resource {
    HR,
    LR,
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resource::HR => "HR",
            Resource::LR => "LR",
        })
    }
}

impl FromStr for Resource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HR" => Ok(Resource::HR),
            "LR" => Ok(Resource::LR),
            other => Err(format!("unknown resource class `{other}`")),
        }
    }
}

pub const DEFAULT_HIGH_RESOURCE: [&str; 7] = ["en", "ru", "de", "zh", "fr", "ja", "es"];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("language `{0}` has no resource class in the registry")]
    UnmappedLanguage(Lang),
    #[error("no retrieved passages for query language `{0}`")]
    NoPassages(Lang),
    #[error("no records to aggregate")]
    NoRecords,
    #[error("{0}")]
    Registry(String),
    #[error("{0}")]
    Profiles(String),
    #[error("{0}")]
    Mismatch(String),
}

/// Language → HR/LR. The default maps the seven high-resource languages
/// and treats everything else as LR; a file-loaded registry only knows the
/// languages it lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceRegistry {
    map: BTreeMap<Lang, Resource>,
    fallback: Option<Resource>,
}

impl Default for ResourceRegistry {
    fn default() -> Self {
        let map = DEFAULT_HIGH_RESOURCE.iter().map(|c| (c.parse().expect("registered"), Resource::HR)).collect();
        ResourceRegistry { map, fallback: Some(Resource::LR) }
    }
}

impl ResourceRegistry {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Lang, Resource)>) -> Self {
        ResourceRegistry { map: pairs.into_iter().collect(), fallback: None }
    }

    /// Reads `lang<TAB>HR|LR` lines; `#` starts a comment.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|e| EvalError::Registry(format!("{}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| EvalError::Registry(format!("{} line {}: {m}", path.display(), i + 1));
            let mut parts = line.split_whitespace();
            let (Some(lang), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `lang class`".into()));
            };
            let lang: Lang = lang.parse().map_err(|e: crate::lang::UnknownLang| bad(e.to_string()))?;
            map.insert(lang, class.parse().map_err(bad)?);
        }
        Ok(ResourceRegistry { map, fallback: None })
    }

    pub fn get(&self, lang: Lang) -> Result<Resource, EvalError> {
        self.map.get(&lang).copied().or(self.fallback).ok_or(EvalError::UnmappedLanguage(lang))
    }
}

/// Per-query scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub query_lang: Lang,
    /// Run label; the strategy name unless a sweep config names it.
    pub label: String,
    pub strategy: Strategy,
    pub prediction: String,
    #[serde(default)]
    pub parse_failed: bool,
    pub golds: Vec<String>,
    pub em: u8,
    pub recall3: f64,
    pub pred_lang: String,
    pub lang_correct: u8,
    /// Original languages of the in-context passages.
    pub retrieved_lang_histogram: BTreeMap<Lang, usize>,
    /// Original languages of the first-stage candidates.
    #[serde(default)]
    pub candidate_lang_histogram: BTreeMap<Lang, usize>,
    #[serde(default)]
    pub short_evidence: bool,
    pub seed: u64,
}

/// Scores one pipeline result against its query's golds.
pub fn score(result: &PipelineResult, query: &QueryItem, label: &str, profiles: &Profiles) -> EvalRecord {
    let pred_lang = detect_language(&result.parsed_answer, profiles);
    EvalRecord {
        query_id: query.id.clone(),
        query_lang: query.lang,
        label: label.to_string(),
        strategy: result.strategy,
        prediction: result.parsed_answer.clone(),
        parse_failed: result.parse_failed,
        golds: query.answers.clone(),
        em: flexible_em(&result.parsed_answer, &query.answers),
        recall3: char_3gram_recall(&result.parsed_answer, &query.answers),
        lang_correct: u8::from(pred_lang == query.lang.as_str()),
        pred_lang,
        retrieved_lang_histogram: result.retrieved_lang_histogram(),
        candidate_lang_histogram: result.candidate_langs.clone(),
        short_evidence: result.flags.short_evidence,
        seed: result.seed,
    }
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    crate::providers::cache::write_atomic(path, out.as_bytes())
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::Mismatch(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Mismatch(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golds(gs: &[&str]) -> Vec<String> {
        gs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("  The  QUEEN. "), "the queen");
        assert_eq!(normalize("答案是：8"), "答案是 8");
        assert_eq!(normalize("Straße"), "strasse");
        assert_eq!(normalize("ＡＢＣ"), "abc");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn em_examples() {
        assert_eq!(flexible_em("The answer is: Aqua.", &golds(&["Aqua", "아쿠아"])), 1);
        assert_eq!(flexible_em("英格兰曾有8位女王作为君主执政....答案是：8", &golds(&["8"])), 1);
        assert_eq!(flexible_em("Mozart", &golds(&["Mozart"])), 1);
        assert_eq!(flexible_em("Mozart", &golds(&["Haydn"])), 0);
        assert_eq!(flexible_em("anything", &golds(&["...", " "])), 0);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(char_3gram_recall("aquarium", &golds(&["aquarium"])), 1.0);
        assert_eq!(char_3gram_recall("abc", &golds(&["abcd"])), 0.5);
        assert_eq!(char_3gram_recall("the answer is 8", &golds(&["8"])), 1.0);
        assert_eq!(char_3gram_recall("the answer is 9", &golds(&["8"])), 0.0);
        // clipping: "aaa" once in pred, twice in gold
        assert_eq!(char_3gram_recall("aaa", &golds(&["aaaa"])), 0.5);
    }

    #[test]
    fn registry_default_and_file() {
        let reg = ResourceRegistry::default();
        assert_eq!(reg.get("de".parse().unwrap()).unwrap(), Resource::HR);
        assert_eq!(reg.get("ko".parse().unwrap()).unwrap(), Resource::LR);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, b"# classes\nde HR\nfi\tLR\n").unwrap();
        let reg = ResourceRegistry::load(f.path()).unwrap();
        assert_eq!(reg.get("fi".parse().unwrap()).unwrap(), Resource::LR);
        assert!(matches!(reg.get("ko".parse().unwrap()), Err(EvalError::UnmappedLanguage(_))));
    }
}
