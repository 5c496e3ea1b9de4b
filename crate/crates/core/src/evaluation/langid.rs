//! Rank-order (Cavnar–Trenkle) language identification over character
//! n-grams, n = 1..=4.
//!
//! Text is normalized, digits are dropped, and each whitespace token is
//! padded with `_` on both sides. A profile is the `top` most frequent
//! n-grams ranked by count, ties by the n-gram string. The distance between
//! a text and a language is the out-of-place sum over the text's own
//! profile (missing n-grams cost `top`), divided by `len * top` so it lies
//! in [0, 1].
//!
//! Profiles file (`profiles.v1.tsv`):
//!
//! ```text
//! #xlrag-langid v1<TAB>top=<N><TAB>threshold=<F>
//! <lang><TAB><rank><TAB><ngram>
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::{normalize, EvalError};
use crate::lang::Lang;

pub const UNDETERMINED: &str = "und";
pub const DEFAULT_TOP: usize = 400;
pub const DEFAULT_THRESHOLD: f64 = 0.92;
const HEADER: &str = "#xlrag-langid v1";
const BUILTIN: &str = include_str!("../../../../data/langid/profiles.v1.tsv");

#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    top: usize,
    threshold: f64,
    ranks: BTreeMap<Lang, HashMap<String, usize>>,
}

/// Ranked n-grams of `text`, most frequent first. Also returns the number
/// of non-space characters seen.
pub fn ranked_ngrams(text: &str) -> (Vec<String>, usize) {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let cleaned: String = normalize(text).chars().map(|c| if c.is_numeric() { ' ' } else { c }).collect();
    let mut letters = 0;
    for token in cleaned.split_whitespace() {
        letters += token.chars().count();
        let padded: Vec<char> = std::iter::once('_').chain(token.chars()).chain(std::iter::once('_')).collect();
        for n in 1..=4 {
            for w in padded.windows(n) {
                if n == 1 && w[0] == '_' {
                    continue;
                }
                *counts.entry(w.iter().collect()).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    (ranked.into_iter().map(|(g, _)| g).collect(), letters)
}

impl Profiles {
    /// Builds one profile per language from its seed sentences.
    pub fn build(seeds: &BTreeMap<Lang, Vec<String>>, top: usize, threshold: f64) -> Self {
        let ranks = seeds
            .iter()
            .map(|(lang, sentences)| {
                let (grams, _) = ranked_ngrams(&sentences.join("\n"));
                (*lang, grams.into_iter().take(top).enumerate().map(|(r, g)| (g, r)).collect())
            })
            .collect();
        Profiles { top, threshold, ranks }
    }

    /// Reads `<lang>.txt` seed files (one sentence per line) from `dir`.
    pub fn build_from_seed_dir(dir: &Path, top: usize, threshold: f64) -> Result<Self, EvalError> {
        let mut seeds = BTreeMap::new();
        let entries = fs::read_dir(dir).map_err(|e| EvalError::Profiles(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| EvalError::Profiles(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let lang: Lang = stem.parse().map_err(|e: crate::lang::UnknownLang| EvalError::Profiles(e.to_string()))?;
            let text = fs::read_to_string(&path).map_err(|e| EvalError::Profiles(format!("{}: {e}", path.display())))?;
            let lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
            seeds.insert(lang, lines);
        }
        if seeds.is_empty() {
            return Err(EvalError::Profiles(format!("no seed files in {}", dir.display())));
        }
        Ok(Self::build(&seeds, top, threshold))
    }

    /// Profiles shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("shipped profiles parse")
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|e| EvalError::Profiles(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| EvalError::Profiles("empty profiles file".into()))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(HEADER) {
            return Err(EvalError::Profiles(format!("bad profiles header `{header}`")));
        }
        let (mut top, mut threshold) = (None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("top", v)) => top = v.parse().ok(),
                Some(("threshold", v)) => threshold = v.parse().ok(),
                _ => {}
            }
        }
        let (Some(top), Some(threshold)) = (top, threshold) else {
            return Err(EvalError::Profiles("profiles header lacks top/threshold".into()));
        };
        let mut ranks: BTreeMap<Lang, HashMap<String, usize>> = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let bad = || EvalError::Profiles(format!("profiles line {}: `{line}`", i + 2));
            let mut parts = line.splitn(3, '\t');
            let (Some(lang), Some(rank), Some(gram)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad());
            };
            let lang: Lang = lang.parse().map_err(|_| bad())?;
            let rank: usize = rank.parse().map_err(|_| bad())?;
            ranks.entry(lang).or_default().insert(gram.to_string(), rank);
        }
        Ok(Profiles { top, threshold, ranks })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{HEADER}\ttop={}\tthreshold={}\n", self.top, self.threshold);
        for (lang, grams) in &self.ranks {
            let mut sorted: Vec<(&String, &usize)> = grams.iter().collect();
            sorted.sort_by_key(|(_, r)| **r);
            for (g, r) in sorted {
                out.push_str(&format!("{lang}\t{r}\t{g}\n"));
            }
        }
        out
    }

    pub fn languages(&self) -> impl Iterator<Item = Lang> + '_ {
        self.ranks.keys().copied()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Normalized out-of-place distance of `text` to every language.
    pub fn distances(&self, text: &str) -> Vec<(Lang, f64)> {
        let (grams, _) = ranked_ngrams(text);
        let doc: Vec<&String> = grams.iter().take(self.top).collect();
        if doc.is_empty() {
            return self.ranks.keys().map(|l| (*l, 1.0)).collect();
        }
        let denom = (doc.len() * self.top) as f64;
        self.ranks
            .iter()
            .map(|(lang, profile)| {
                let total: usize = doc
                    .iter()
                    .enumerate()
                    .map(|(r, g)| profile.get(*g).map_or(self.top, |&pr| pr.abs_diff(r)))
                    .sum();
                (*lang, total as f64 / denom)
            })
            .collect()
    }
}

/// Most likely language code of `text`, or `"und"` for text under three
/// letters or too far from every profile. Ties go to the smaller code.
pub fn detect_language(text: &str, profiles: &Profiles) -> String {
    let (_, letters) = ranked_ngrams(text);
    if letters < 3 {
        return UNDETERMINED.to_string();
    }
    let mut best: Option<(Lang, f64)> = None;
    for (lang, d) in profiles.distances(text) {
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((lang, d));
        }
    }
    match best {
        Some((lang, d)) if d <= profiles.threshold => lang.to_string(),
        _ => UNDETERMINED.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_and_empty_text_is_undetermined() {
        let p = Profiles::builtin();
        for t in ["", "  ", "ab", "12345", "?!"] {
            assert_eq!(detect_language(t, &p), UNDETERMINED, "{t:?}");
        }
    }

    #[test]
    fn tsv_round_trip() {
        let p = Profiles::builtin();
        assert_eq!(Profiles::parse(&p.to_tsv()).unwrap(), p);
        assert!(Profiles::parse("garbage\n").is_err());
    }

    #[test]
    fn ties_prefer_smaller_code() {
        let seeds: BTreeMap<Lang, Vec<String>> =
            [("fr", "même texte"), ("de", "même texte")].iter().map(|(l, s)| (l.parse().unwrap(), vec![s.to_string()])).collect();
        let p = Profiles::build(&seeds, 50, 0.99);
        assert_eq!(detect_language("même texte", &p), "de");
    }
}
