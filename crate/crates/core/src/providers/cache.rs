//! Content-addressed response cache with LRU eviction, plus per-key locks
//! that coalesce concurrent identical requests.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::SystemTime;

use sha2::{Digest, Sha256};

/// Default on-disk budget: 512 MiB.
pub const DEFAULT_CAPACITY_BYTES: u64 = 512 * 1024 * 1024;

/// Hex SHA-256 of the canonical JSON encoding (object keys sorted).
pub fn request_hash(request: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(request).expect("json value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Default)]
struct Index {
    // hash -> (size, last-use tick)
    entries: HashMap<String, (u64, u64)>,
    total: u64,
    tick: u64,
}

/// Response cache keyed by request hash.
///
/// With a directory, entries persist as `<dir>/<hh>/<hash>.json` and survive
/// across processes; writes go to a temp file that is renamed into place.
/// Without one, entries live in memory for the lifetime of the value.
#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    capacity: u64,
    mem: Mutex<HashMap<String, String>>,
    index: Mutex<Index>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            dir: None,
            capacity: DEFAULT_CAPACITY_BYTES,
            mem: Mutex::new(HashMap::new()),
            index: Mutex::new(Index::default()),
        }
    }

    /// Opens (creating if needed) a disk cache. Existing entries are indexed
    /// in modification-time order so eviction continues where it left off.
    pub fn open(dir: &Path, capacity: u64) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let mut found: Vec<(SystemTime, String, u64)> = Vec::new();
        for shard in fs::read_dir(dir)? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for entry in fs::read_dir(shard.path())? {
                let entry = entry?;
                let path = entry.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let meta = entry.metadata()?;
                let hash = path.file_stem().unwrap().to_string_lossy().into_owned();
                found.push((meta.modified().unwrap_or(SystemTime::UNIX_EPOCH), hash, meta.len()));
            }
        }
        found.sort();
        let mut index = Index::default();
        for (_, hash, size) in found {
            index.tick += 1;
            index.total += size;
            index.entries.insert(hash, (size, index.tick));
        }
        Ok(ResponseCache {
            dir: Some(dir.to_path_buf()),
            capacity,
            mem: Mutex::new(HashMap::new()),
            index: Mutex::new(index),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn entry_path(dir: &Path, hash: &str) -> PathBuf {
        dir.join(&hash[..2.min(hash.len())]).join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Option<String> {
        let value = match &self.dir {
            None => self.mem.lock().unwrap().get(hash).cloned(),
            Some(dir) => {
                let path = Self::entry_path(dir, hash);
                let value = fs::read_to_string(&path).ok()?;
                if let Ok(f) = fs::File::options().write(true).open(&path) {
                    let _ = f.set_modified(SystemTime::now());
                }
                Some(value)
            }
        }?;
        let mut index = self.index.lock().unwrap();
        index.tick += 1;
        let tick = index.tick;
        index
            .entries
            .entry(hash.to_string())
            .and_modify(|e| e.1 = tick)
            .or_insert((value.len() as u64, tick));
        Some(value)
    }

    pub fn put(&self, hash: &str, value: &str) {
        let size = value.len() as u64;
        match &self.dir {
            None => {
                self.mem.lock().unwrap().insert(hash.to_string(), value.to_string());
            }
            Some(dir) => {
                if let Err(e) = write_atomic(&Self::entry_path(dir, hash), value.as_bytes()) {
                    tracing::warn!(error = %e, hash, "failed to persist cache entry");
                    return;
                }
            }
        }
        let evicted = {
            let mut index = self.index.lock().unwrap();
            index.tick += 1;
            let tick = index.tick;
            if let Some((old, _)) = index.entries.insert(hash.to_string(), (size, tick)) {
                index.total -= old;
            }
            index.total += size;
            let mut evicted = Vec::new();
            while index.total > self.capacity && index.entries.len() > 1 {
                let victim = index
                    .entries
                    .iter()
                    .filter(|(h, _)| h.as_str() != hash)
                    .min_by_key(|(h, (_, t))| (*t, (*h).clone()))
                    .map(|(h, _)| h.clone())
                    .expect("non-empty index");
                let (vsize, _) = index.entries.remove(&victim).unwrap();
                index.total -= vsize;
                evicted.push(victim);
            }
            evicted
        };
        for victim in evicted {
            match &self.dir {
                None => {
                    self.mem.lock().unwrap().remove(&victim);
                }
                Some(dir) => {
                    let _ = fs::remove_file(Self::entry_path(dir, &victim));
                }
            }
        }
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.index.lock().unwrap().entries.contains_key(hash)
    }

    pub fn len(&self) -> usize {
        self.index.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_bytes(&self) -> u64 {
        self.index.lock().unwrap().total
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(
        ".{}.{}.tmp",
        path.file_name().unwrap_or_default().to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Mutual exclusion per string key. Holding the guard for a request hash
/// makes concurrent identical requests wait and then hit the cache.
#[derive(Debug, Default)]
pub struct KeyLocks {
    held: Mutex<HashSet<String>>,
    released: Condvar,
}

pub struct KeyGuard<'a> {
    locks: &'a KeyLocks,
    key: String,
}

impl KeyLocks {
    pub fn lock(&self, key: &str) -> KeyGuard<'_> {
        let mut held = self.held.lock().unwrap();
        while held.contains(key) {
            held = self.released.wait(held).unwrap();
        }
        held.insert(key.to_string());
        KeyGuard { locks: self, key: key.to_string() }
    }
}

impl Drop for KeyGuard<'_> {
    fn drop(&mut self) {
        let mut held = self.locks.held.lock().unwrap_or_else(|e| e.into_inner());
        held.remove(&self.key);
        self.locks.released.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn request_hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        assert_eq!(request_hash(&a), request_hash(&b));
        let c: serde_json::Value = serde_json::from_str(r#"{"a":[2,1],"b":1}"#).unwrap();
        assert_ne!(request_hash(&a), request_hash(&c));
    }

    #[test]
    fn disk_cache_persists_across_instances() {
        let dir = tempfile::tempdir().unwrap();
        let hash = "ab".repeat(32);
        {
            let cache = ResponseCache::open(dir.path(), DEFAULT_CAPACITY_BYTES).unwrap();
            assert!(cache.get(&hash).is_none());
            cache.put(&hash, "\"hello\"");
        }
        let cache = ResponseCache::open(dir.path(), DEFAULT_CAPACITY_BYTES).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get(&hash).as_deref(), Some("\"hello\""));
        // no temp files left behind
        let leftovers: Vec<_> = fs::read_dir(dir.path().join("ab"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn evicts_least_recently_used() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path(), 25).unwrap();
        let (a, b, c) = ("aa".repeat(32), "bb".repeat(32), "cc".repeat(32));
        cache.put(&a, "0123456789");
        cache.put(&b, "0123456789");
        // touch a so b becomes the oldest
        assert!(cache.get(&a).is_some());
        cache.put(&c, "0123456789");
        assert!(cache.contains(&a));
        assert!(!cache.contains(&b));
        assert!(cache.contains(&c));
        assert!(cache.get(&b).is_none());
        assert!(cache.total_bytes() <= 25);
    }

    #[test]
    fn memory_cache_evicts_too() {
        let cache = ResponseCache { capacity: 4, ..ResponseCache::in_memory() };
        cache.put("k1", "abc");
        cache.put("k2", "abc");
        assert!(!cache.contains("k1"));
        assert_eq!(cache.get("k2").as_deref(), Some("abc"));
    }

    #[test]
    fn key_locks_serialize_same_key() {
        let locks = Arc::new(KeyLocks::default());
        let inside = Arc::new(AtomicUsize::new(0));
        let max_inside = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (locks, inside, max_inside) = (locks.clone(), inside.clone(), max_inside.clone());
                std::thread::spawn(move || {
                    let _g = locks.lock("same");
                    let now = inside.fetch_add(1, Ordering::SeqCst) + 1;
                    max_inside.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(2));
                    inside.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(max_inside.load(Ordering::SeqCst), 1);
    }
}
