//! Question sets: one JSON object per line with `id`, `lang`, `question`,
//! `answers` and an optional `resource` class.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evaluation::Resource;
use crate::lang::Lang;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryItem {
    pub id: String,
    pub lang: Lang,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<Resource>,
}

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("{path}: duplicate query id `{id}`")]
    DuplicateId { path: String, id: String },
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryItem>, QueryError> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| QueryError::Io { path: shown.clone(), source })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| QueryError::Malformed { path: shown.clone(), line: i + 1, message };
        let q: QueryItem = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if q.question.trim().is_empty() {
            return Err(malformed("empty question".into()));
        }
        if q.answers.is_empty() {
            return Err(malformed("no gold answers".into()));
        }
        if !seen.insert(q.id.clone()) {
            return Err(QueryError::DuplicateId { path: shown, id: q.id });
        }
        out.push(q);
    }
    Ok(out)
}
