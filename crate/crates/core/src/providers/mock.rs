//! Deterministic offline providers.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::cache::request_hash;
use super::{GenerationParams, LlmProvider, ProviderError, Translated, TranslationProvider};
use crate::evaluation::normalize;
use crate::lang::Lang;
use crate::pipeline::prompt;

/// One dictionary line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub src_lang: Lang,
    pub tgt_lang: Lang,
    pub src_text: String,
    pub tgt_text: String,
}

/// NFC + trim, the normalization applied to translation keys.
pub fn translation_key_text(text: &str) -> String {
    text.trim().nfc().collect()
}

/// Exact-match sentence dictionary translator.
///
/// Misses are passed through tagged as `⟦mt:src→tgt⟧ original` so that
/// untranslated text stays visible downstream.
#[derive(Debug)]
pub struct MockTranslator {
    id: String,
    entries: HashMap<(Lang, Lang, String), String>,
    // (tgt, text) -> src, for auto-detection
    by_text: HashMap<(Lang, String), Lang>,
    invocations: AtomicUsize,
}

impl MockTranslator {
    pub fn new(entries: impl IntoIterator<Item = DictionaryEntry>) -> Self {
        let mut map = HashMap::new();
        let mut by_text = HashMap::new();
        for e in entries {
            let key = translation_key_text(&e.src_text);
            by_text.entry((e.tgt_lang, key.clone())).or_insert(e.src_lang);
            map.insert((e.src_lang, e.tgt_lang, key), e.tgt_text);
        }
        let mut sorted: Vec<_> = map.iter().collect();
        sorted.sort();
        let id = format!("mock-dict/{}", &request_hash(&serde_json::json!(sorted))[..16]);
        MockTranslator { id, entries: map, by_text, invocations: AtomicUsize::new(0) }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: DictionaryEntry = serde_json::from_str(line)
                .map_err(|e| ProviderError::Fixture(format!("{} line {}: {e}", path.display(), i + 1)))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of `translate` calls served so far.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }
}

impl TranslationProvider for MockTranslator {
    fn id(&self) -> &str {
        &self.id
    }

    fn translate(&self, text: &str, src: Option<Lang>, tgt: Lang) -> Result<Translated, ProviderError> {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let key = translation_key_text(text);
        let src = src.or_else(|| self.by_text.get(&(tgt, key.clone())).copied());
        if src == Some(tgt) {
            return Ok(Translated { text: text.to_string(), detected_src: src });
        }
        let hit = src.and_then(|s| self.entries.get(&(s, tgt, key)));
        let text = match hit {
            Some(t) => t.clone(),
            None => {
                let tag = src.map_or("auto".to_string(), |s| s.to_string());
                format!("⟦mt:{tag}→{tgt}⟧ {text}")
            }
        };
        Ok(Translated { text, detected_src: src })
    }
}

/// Normalized question → gold answers.
#[derive(Debug, Clone, Default)]
pub struct GoldTable {
    golds: HashMap<String, Vec<String>>,
}

impl GoldTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, question: &str, golds: Vec<String>) {
        self.golds.insert(normalize(question), golds);
    }

    pub fn get(&self, question: &str) -> Option<&[String]> {
        self.golds.get(&normalize(question)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.golds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.golds.is_empty()
    }
}

/// Splits on sentence-final punctuation followed by whitespace (or end of
/// text) and on line breaks. Terminators stay with their sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\n' {
            push_sentence(&mut out, &mut current);
            continue;
        }
        current.push(c);
        let full_stop = matches!(c, '。' | '！' | '？');
        let latin_stop = matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace());
        if full_stop || latin_stop {
            push_sentence(&mut out, &mut current);
        }
    }
    push_sentence(&mut out, &mut current);
    out
}

fn push_sentence(out: &mut Vec<String>, current: &mut String) {
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    current.clear();
}

/// Extractive stand-in generator.
///
/// Looks up the prompt's question in a gold table and answers with a
/// gold-bearing evidence sentence, or `Answer: unknown`. Candidate sentences
/// are ranked shortest first, then bytewise, so the output depends on the
/// evidence set and not on its order.
#[derive(Debug)]
pub struct ExtractiveLlm {
    id: String,
    golds: GoldTable,
}

impl ExtractiveLlm {
    pub fn new(golds: GoldTable) -> Self {
        let mut sorted: Vec<_> = golds.golds.iter().collect();
        sorted.sort();
        let id = format!("mock-extractive/{}", &request_hash(&serde_json::json!(sorted))[..16]);
        ExtractiveLlm { id, golds }
    }

    pub fn answer(&self, evidence: &[String], question: &str) -> String {
        let Some(golds) = self.golds.get(question) else {
            return "Answer: unknown".to_string();
        };
        let golds: Vec<String> = golds.iter().map(|g| normalize(g)).filter(|g| !g.is_empty()).collect();
        let best = evidence
            .iter()
            .flat_map(|e| split_sentences(e))
            .filter(|s| {
                let ns = normalize(s);
                golds.iter().any(|g| ns.contains(g.as_str()))
            })
            .min_by(|a, b| a.chars().count().cmp(&b.chars().count()).then_with(|| a.cmp(b)));
        match best {
            Some(sentence) => format!("Answer: {sentence}"),
            None => "Answer: unknown".to_string(),
        }
    }
}

impl LlmProvider for ExtractiveLlm {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, prompt_text: &str, _params: &GenerationParams) -> Result<String, ProviderError> {
        let parsed = prompt::parse_rendered(prompt_text)
            .ok_or_else(|| ProviderError::Other("mock LLM could not parse prompt sections".into()))?;
        Ok(self.answer(&parsed.evidence, &parsed.question))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(src: &str, tgt: &str, s: &str, t: &str) -> DictionaryEntry {
        DictionaryEntry {
            src_lang: src.parse().unwrap(),
            tgt_lang: tgt.parse().unwrap(),
            src_text: s.into(),
            tgt_text: t.into(),
        }
    }

    #[test]
    fn dictionary_hit_and_tagged_miss() {
        let es: Lang = "es".parse().unwrap();
        let m = MockTranslator::new([entry(
            "es",
            "en",
            "¿quién escribió variaciones de Campanita del lugar?",
            "Who wrote variations of Tinkerbell of the Place?",
        )]);
        let hit = m
            .translate("  ¿quién escribió variaciones de Campanita del lugar? ", Some(es), Lang::EN)
            .unwrap();
        assert_eq!(hit.text, "Who wrote variations of Tinkerbell of the Place?");
        let miss = m.translate("hola", Some(es), Lang::EN).unwrap();
        assert_eq!(miss.text, "⟦mt:es→en⟧ hola");
        let auto = m
            .translate("¿quién escribió variaciones de Campanita del lugar?", None, Lang::EN)
            .unwrap();
        assert_eq!(auto.detected_src, Some(es));
        assert_eq!(m.invocations(), 3);
    }

    #[test]
    fn malformed_dictionary_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, b"{\"src_lang\":\"es\"}\n").unwrap();
        assert!(matches!(MockTranslator::from_file(f.path()), Err(ProviderError::Fixture(_))));
    }

    #[test]
    fn sentence_splitting() {
        let s = split_sentences("Version 3.5 shipped. Then what?\n英格兰曾有8位女王。答案是：8");
        assert_eq!(s, vec!["Version 3.5 shipped.", "Then what?", "英格兰曾有8位女王。", "答案是：8"]);
    }

    #[test]
    fn extractive_answers_gold_sentence_or_unknown() {
        let mut golds = GoldTable::new();
        golds.insert("Who made Barbie Girl?", vec!["아쿠아".into(), "Aqua".into()]);
        let llm = ExtractiveLlm::new(golds);
        let evidence = vec![
            "The music video was recorded in 2005.".to_string(),
            "Barbie Girl is a song by the Danish-Norwegian dance-pop group Aqua. It was released in May 1997.".to_string(),
        ];
        assert_eq!(
            llm.answer(&evidence, "who made barbie girl"),
            "Answer: Barbie Girl is a song by the Danish-Norwegian dance-pop group Aqua."
        );
        assert_eq!(llm.answer(&evidence[..1], "Who made Barbie Girl?"), "Answer: unknown");
        assert_eq!(llm.answer(&evidence, "unseen question"), "Answer: unknown");
        let mut reversed = evidence.clone();
        reversed.reverse();
        assert_eq!(llm.answer(&reversed, "Who made Barbie Girl?"), llm.answer(&evidence, "Who made Barbie Girl?"));
    }
}
