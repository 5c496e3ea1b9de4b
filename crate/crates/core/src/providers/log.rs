use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Ok,
    RetriedOk,
    Failed,
}

/// One provider attempt or cache hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallLogEntry {
    pub endpoint: String,
    pub request_hash: String,
    pub cached: bool,
    /// True when the attempt went over the network.
    pub network: bool,
    pub attempt: u32,
    pub latency_ms: u64,
    /// Delay slept before this attempt.
    #[serde(default)]
    pub backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    pub outcome: Outcome,
}

impl CallLogEntry {
    pub fn cache_hit(endpoint: &str, request_hash: &str, latency: Duration) -> Self {
        CallLogEntry {
            endpoint: endpoint.to_string(),
            request_hash: request_hash.to_string(),
            cached: true,
            network: false,
            attempt: 0,
            latency_ms: latency.as_millis() as u64,
            backoff_ms: 0,
            status: None,
            outcome: Outcome::Ok,
        }
    }

    pub fn invocation(endpoint: &str, request_hash: &str, latency: Duration, outcome: Outcome, network: bool) -> Self {
        CallLogEntry {
            endpoint: endpoint.to_string(),
            request_hash: request_hash.to_string(),
            cached: false,
            network,
            attempt: 1,
            latency_ms: latency.as_millis() as u64,
            backoff_ms: 0,
            status: None,
            outcome,
        }
    }
}

/// Shared append-only call log.
#[derive(Debug, Clone, Default)]
pub struct CallLog {
    entries: Arc<Mutex<Vec<CallLogEntry>>>,
}

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, entry: CallLogEntry) {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).push(entry);
    }

    pub fn entries(&self) -> Vec<CallLogEntry> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries that invoked a provider (cache misses).
    pub fn invocations(&self) -> usize {
        self.entries().iter().filter(|e| !e.cached).count()
    }

    pub fn network_calls(&self) -> usize {
        self.entries().iter().filter(|e| e.network).count()
    }

    /// Writes the log as JSON lines, replacing any existing file.
    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for entry in self.entries() {
            serde_json::to_writer(&mut out, &entry)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn append_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        for entry in self.entries() {
            serde_json::to_writer(&mut out, &entry)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}
