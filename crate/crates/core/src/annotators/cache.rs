//! Append-only, content-addressed response cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub backend: String,
    pub model: String,
    pub prompt_hash: String,
    pub text: String,
    pub latency_ms: u64,
}

pub fn cache_key(backend: &str, model: &str, prompt_hash: &str) -> String {
    let mut h = Sha256::new();
    for part in [backend, model, prompt_hash] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Opens (or creates) a JSONL cache. A torn final line is ignored.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(e) => {
                        entries.entry(e.key.clone()).or_insert(e);
                    }
                    Err(e) => log::warn!("{}: skipping cache line {}: {e}", path.display(), n + 1),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path: Some(path), entries: RwLock::new(entries), writer: Mutex::new(Some(file)) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    /// Stores `entry` unless its key is already present; the first write wins.
    pub fn put(&self, entry: CacheEntry) -> io::Result<()> {
        let mut writer = self.writer.lock().expect("cache lock");
        if self.entries.read().expect("cache lock").contains_key(&entry.key) {
            return Ok(());
        }
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&entry).map_err(io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.entries.write().expect("cache lock").insert(entry.key.clone(), entry);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: &str, text: &str) -> CacheEntry {
        CacheEntry {
            key: key.into(),
            backend: "b".into(),
            model: "m".into(),
            prompt_hash: "p".into(),
            text: text.into(),
            latency_ms: 3,
        }
    }

    #[test]
    fn key_depends_on_every_part() {
        let k = cache_key("a", "b", "c");
        assert_ne!(k, cache_key("a", "b", "d"));
        assert_ne!(k, cache_key("a", "bc", ""));
        assert_eq!(k, cache_key("a", "b", "c"));
    }

    #[test]
    fn persists_and_first_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put(entry("k1", "one")).unwrap();
            c.put(entry("k1", "other")).unwrap();
            c.put(entry("k2", "two")).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"key\": \"torn").unwrap();
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("k1").unwrap().text, "one");
    }
}
