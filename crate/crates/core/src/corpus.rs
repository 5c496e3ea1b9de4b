//! Multilingual passage collections partitioned into per-language buckets.
//!
//! A corpus file is UTF-8 JSON lines, one passage per line, with keys
//! `id`, `lang`, `title`, `text` and `source`. Passages are assumed to be
//! pre-chunked; no deduplication or splitting happens here.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lang::{format_lang_set, Lang};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub lang: Lang,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
}

impl Document {
    /// Text used both for embedding and as prompt evidence: title and body
    /// joined by a newline, or just the body when the title is empty.
    pub fn passage_text(&self) -> String {
        if self.title.trim().is_empty() {
            self.text.clone()
        } else {
            format!("{}\n{}", self.title, self.text)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: document `{id}` has empty text")]
    EmptyText { line: usize, id: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: document `{id}` has language `{lang}` outside the expected set {{{expected}}}")]
    UnexpectedLanguage {
        line: usize,
        id: String,
        lang: String,
        expected: String,
    },
    #[error("unknown language `{0}` for this corpus")]
    UnknownLanguage(String),
}

/// What to do with a record whose language is not in the expected set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LangPolicy {
    #[default]
    Reject,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestWarning {
    pub line: usize,
    pub id: String,
    pub message: String,
}

/// An immutable passage collection with its language partition.
#[derive(Debug, Clone)]
pub struct Corpus {
    name: String,
    languages: BTreeSet<Lang>,
    documents: Vec<Arc<Document>>,
    buckets: BTreeMap<Lang, Vec<usize>>,
    content_hash: String,
}

impl Corpus {
    /// Builds a corpus from documents already in memory, enforcing the same
    /// invariants as [`ingest_corpus`] with the reject policy.
    pub fn from_documents(
        name: impl Into<String>,
        languages: BTreeSet<Lang>,
        documents: Vec<Document>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, doc) in documents.iter().enumerate() {
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { line: i + 1, id: doc.id.clone() });
            }
            if !seen.insert(doc.id.clone()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
            if !languages.contains(&doc.lang) {
                return Err(CorpusError::UnexpectedLanguage {
                    line: i + 1,
                    id: doc.id.clone(),
                    lang: doc.lang.to_string(),
                    expected: format_lang_set(&languages),
                });
            }
        }
        Ok(Self::assemble(name.into(), languages, documents))
    }

    fn assemble(name: String, languages: BTreeSet<Lang>, documents: Vec<Document>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(name.as_bytes());
        for doc in &documents {
            let line = serde_json::to_string(doc).expect("document serializes");
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        let content_hash = hex::encode(hasher.finalize());

        let mut buckets: BTreeMap<Lang, Vec<usize>> =
            languages.iter().map(|&l| (l, Vec::new())).collect();
        for (i, doc) in documents.iter().enumerate() {
            buckets.entry(doc.lang).or_default().push(i);
        }
        Corpus {
            name,
            languages,
            documents: documents.into_iter().map(Arc::new).collect(),
            buckets,
            content_hash,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The registered language set (buckets may be empty).
    pub fn languages(&self) -> &BTreeSet<Lang> {
        &self.languages
    }

    pub fn documents(&self) -> &[Arc<Document>] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Hex SHA-256 over the corpus name and canonical records.
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn bucket(&self, lang: Lang) -> impl Iterator<Item = &Arc<Document>> {
        self.buckets
            .get(&lang)
            .into_iter()
            .flatten()
            .map(move |&i| &self.documents[i])
    }

    pub fn bucket_len(&self, lang: Lang) -> usize {
        self.buckets.get(&lang).map_or(0, Vec::len)
    }

    /// Languages whose bucket holds at least one document.
    pub fn populated_languages(&self) -> BTreeSet<Lang> {
        self.buckets
            .iter()
            .filter(|(_, ids)| !ids.is_empty())
            .map(|(&l, _)| l)
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&Arc<Document>> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// View over the documents whose language is in `langs`.
    pub fn restrict(&self, langs: &BTreeSet<Lang>) -> Result<CorpusView<'_>, CorpusError> {
        if let Some(unknown) = langs.iter().find(|l| !self.languages.contains(l)) {
            return Err(CorpusError::UnknownLanguage(unknown.to_string()));
        }
        let mut indices: Vec<usize> = langs
            .iter()
            .flat_map(|l| self.buckets.get(l).into_iter().flatten().copied())
            .collect();
        indices.sort_unstable();
        Ok(CorpusView { corpus: self, langs: langs.clone(), indices })
    }

    pub fn full_view(&self) -> CorpusView<'_> {
        CorpusView {
            corpus: self,
            langs: self.languages.clone(),
            indices: (0..self.documents.len()).collect(),
        }
    }
}

/// Borrowed subset of a corpus restricted to a language set.
#[derive(Debug, Clone)]
pub struct CorpusView<'a> {
    corpus: &'a Corpus,
    langs: BTreeSet<Lang>,
    indices: Vec<usize>,
}

impl<'a> CorpusView<'a> {
    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    pub fn languages(&self) -> &BTreeSet<Lang> {
        &self.langs
    }

    pub fn documents(&self) -> impl Iterator<Item = &'a Arc<Document>> + '_ {
        self.indices.iter().map(|&i| &self.corpus.documents[i])
    }

    pub fn ids(&self) -> BTreeSet<&'a str> {
        self.indices.iter().map(|&i| self.corpus.documents[i].id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Narrows this view further; langs must be a subset of the view's languages.
    pub fn restrict(&self, langs: &BTreeSet<Lang>) -> Result<CorpusView<'a>, CorpusError> {
        if let Some(unknown) = langs.iter().find(|l| !self.langs.contains(l)) {
            return Err(CorpusError::UnknownLanguage(unknown.to_string()));
        }
        let indices = self
            .indices
            .iter()
            .copied()
            .filter(|&i| langs.contains(&self.corpus.documents[i].lang))
            .collect();
        Ok(CorpusView { corpus: self.corpus, langs: langs.clone(), indices })
    }
}

#[derive(Debug)]
pub struct Ingested {
    pub corpus: Corpus,
    pub warnings: Vec<IngestWarning>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    lang: String,
    #[serde(default)]
    title: String,
    text: String,
    #[serde(default)]
    source: String,
}

/// Reads a JSON-lines corpus file. Blank lines are ignored.
pub fn ingest_corpus(
    path: &Path,
    expected_langs: &BTreeSet<Lang>,
    policy: LangPolicy,
) -> Result<Ingested, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut documents = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.id.trim().is_empty() {
            return Err(CorpusError::Malformed { line: line_no, message: "empty id".into() });
        }
        if raw.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { line: line_no, id: raw.id });
        }

        let lang = raw.lang.parse::<Lang>().ok().filter(|l| expected_langs.contains(l));
        let Some(lang) = lang else {
            match policy {
                LangPolicy::Reject => {
                    return Err(CorpusError::UnexpectedLanguage {
                        line: line_no,
                        id: raw.id,
                        lang: raw.lang,
                        expected: format_lang_set(expected_langs),
                    })
                }
                LangPolicy::Skip => {
                    tracing::warn!(line = line_no, id = %raw.id, lang = %raw.lang, "skipping document outside expected languages");
                    warnings.push(IngestWarning {
                        line: line_no,
                        id: raw.id,
                        message: format!("language `{}` not in expected set", raw.lang),
                    });
                    continue;
                }
            }
        };

        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId(raw.id));
        }
        documents.push(Document { id: raw.id, lang, title: raw.title, text: raw.text, source: raw.source });
    }

    Ok(Ingested {
        corpus: Corpus::assemble(name, expected_langs.clone(), documents),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_lang_set;
    use std::io::Write;

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn record(id: &str, lang: &str, text: &str) -> String {
        serde_json::json!({"id": id, "lang": lang, "title": "", "text": text, "source": "fixture"})
            .to_string()
    }

    fn three_lang() -> tempfile::NamedTempFile {
        write_lines(&[
            record("d1", "en", "Barbie Girl is a song by Aqua."),
            record("d2", "de", "Barbie Girl ist ein Lied von Aqua."),
            record("d3", "ko", "바비 걸은 아쿠아의 노래이다."),
        ])
    }

    #[test]
    fn ingests_three_language_fixture() {
        let f = three_lang();
        let langs = parse_lang_set("en,de,ko").unwrap();
        let ing = ingest_corpus(f.path(), &langs, LangPolicy::Reject).unwrap();
        assert_eq!(ing.corpus.len(), 3);
        assert_eq!(ing.corpus.populated_languages().len(), 3);
        for l in &langs {
            assert_eq!(ing.corpus.bucket_len(*l), 1);
        }
        assert!(ing.warnings.is_empty());
    }

    #[test]
    fn duplicate_id_is_named() {
        let f = write_lines(&[record("dup", "en", "one"), record("dup", "en", "two")]);
        let err = ingest_corpus(f.path(), &parse_lang_set("en").unwrap(), LangPolicy::Reject)
            .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(ref id) if id == "dup"));
        assert!(err.to_string().contains("dup"));
    }

    #[test]
    fn malformed_record_reports_line() {
        let f = write_lines(&[record("a", "en", "ok"), "{not json".into()]);
        let err = ingest_corpus(f.path(), &parse_lang_set("en").unwrap(), LangPolicy::Reject)
            .unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_text_rejected() {
        let f = write_lines(&[record("a", "en", "   ")]);
        let err = ingest_corpus(f.path(), &parse_lang_set("en").unwrap(), LangPolicy::Reject)
            .unwrap_err();
        assert!(matches!(err, CorpusError::EmptyText { .. }));
    }

    #[test]
    fn unreadable_file() {
        let err = ingest_corpus(
            Path::new("/nonexistent/corpus.jsonl"),
            &parse_lang_set("en").unwrap(),
            LangPolicy::Reject,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn out_of_set_language_rejected_by_default() {
        let f = three_lang();
        let err = ingest_corpus(f.path(), &parse_lang_set("en,de").unwrap(), LangPolicy::default())
            .unwrap_err();
        assert!(matches!(err, CorpusError::UnexpectedLanguage { line: 3, .. }));
    }

    #[test]
    fn restrict_filters_and_rejects_unknown() {
        let f = three_lang();
        let corpus = ingest_corpus(f.path(), &parse_lang_set("en,de,ko").unwrap(), LangPolicy::Reject)
            .unwrap()
            .corpus;
        let de = corpus.restrict(&parse_lang_set("de").unwrap()).unwrap();
        assert_eq!(de.ids().into_iter().collect::<Vec<_>>(), vec!["d2"]);
        let en_ko = corpus.restrict(&parse_lang_set("en,ko").unwrap()).unwrap();
        assert_eq!(en_ko.len(), 2);
        let all = corpus.restrict(corpus.languages()).unwrap();
        assert_eq!(all.len(), corpus.len());
        assert!(matches!(
            corpus.restrict(&parse_lang_set("fr").unwrap()),
            Err(CorpusError::UnknownLanguage(_))
        ));
        // original untouched
        assert_eq!(corpus.len(), 3);
    }

    #[test]
    fn content_hash_is_stable() {
        let f = three_lang();
        let langs = parse_lang_set("en,de,ko").unwrap();
        let a = ingest_corpus(f.path(), &langs, LangPolicy::Reject).unwrap().corpus;
        let b = ingest_corpus(f.path(), &langs, LangPolicy::Reject).unwrap().corpus;
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }

    #[test]
    fn passage_text_joins_title() {
        let mut d = Document {
            id: "x".into(),
            lang: Lang::EN,
            title: "Aqua".into(),
            text: "A Danish band.".into(),
            source: String::new(),
        };
        assert_eq!(d.passage_text(), "Aqua\nA Danish band.");
        d.title.clear();
        assert_eq!(d.passage_text(), "A Danish band.");
    }
}
