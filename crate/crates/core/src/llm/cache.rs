//! Record/replay completion cache.
//!
//! The cache is an append-only JSONL file, one `{key, model_id, response}`
//! object per line, keyed by [`cache_key`]. Lookups take a read lock; appends
//! are serialized behind a mutex and flushed line by line, so a crash loses
//! at most the line being written. A truncated final line is ignored on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{cache_key, ChatBackend, ChatMessage, GenerationConfig, LlmError};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    model_id: String,
    response: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub hits: u64,
    pub misses: u64,
    pub writes: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    path: PathBuf,
    map: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
    hits: AtomicU64,
    misses: AtomicU64,
    writes: AtomicU64,
}

impl ResponseCache {
    /// Opens (or creates on first write) the cache file at `path`.
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let mut map = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
            let lines: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(line) {
                    Ok(e) => {
                        map.entry(e.key).or_insert(e.response);
                    }
                    Err(_) if i + 1 == last => {}
                    Err(err) => {
                        return Err(LlmError::Cache(format!(
                            "{} line {}: {err}",
                            path.display(),
                            i + 1
                        )))
                    }
                }
            }
        }
        Ok(ResponseCache {
            path: path.to_path_buf(),
            map: RwLock::new(map),
            writer: Mutex::new(None),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            writes: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let hit = self.map.read().expect("cache lock poisoned").get(key).cloned();
        match hit {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        hit
    }

    pub fn insert(&self, key: &str, model_id: &str, response: &str) -> Result<(), LlmError> {
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if self.map.read().expect("cache lock poisoned").contains_key(key) {
            return Ok(());
        }
        if writer.is_none() {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| LlmError::Cache(format!("{}: {e}", self.path.display())))?;
            *writer = Some(file);
        }
        let entry = CacheEntry {
            key: key.to_string(),
            model_id: model_id.to_string(),
            response: response.to_string(),
        };
        let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
        line.push('\n');
        let file = writer.as_mut().expect("writer opened above");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| LlmError::Cache(format!("{}: {e}", self.path.display())))?;
        self.map
            .write()
            .expect("cache lock poisoned")
            .insert(key.to_string(), response.to_string());
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.len() as u64,
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            writes: self.writes.load(Ordering::Relaxed),
        }
    }
}

/// Serves cached completions and records misses from the wrapped backend.
pub struct CachingBackend<B> {
    inner: B,
    cache: Arc<ResponseCache>,
}

impl<B: ChatBackend> CachingBackend<B> {
    pub fn new(inner: B, cache: Arc<ResponseCache>) -> Self {
        CachingBackend { inner, cache }
    }

    pub fn cache(&self) -> &Arc<ResponseCache> {
        &self.cache
    }
}

impl<B: ChatBackend> ChatBackend for CachingBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, messages: &[ChatMessage], config: &GenerationConfig) -> Result<String, LlmError> {
        let key = cache_key(self.inner.model_id(), messages, config);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let reply = self.inner.complete(messages, config)?;
        if !reply.is_empty() {
            self.cache.insert(&key, self.inner.model_id(), &reply)?;
        }
        Ok(reply)
    }
}

/// Cache-only backend: a miss is an error, never a network call.
pub struct ReplayBackend {
    model_id: String,
    cache: Arc<ResponseCache>,
}

impl ReplayBackend {
    pub fn new(model_id: impl Into<String>, cache: Arc<ResponseCache>) -> Self {
        ReplayBackend {
            model_id: model_id.into(),
            cache,
        }
    }
}

impl ChatBackend for ReplayBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, messages: &[ChatMessage], config: &GenerationConfig) -> Result<String, LlmError> {
        let key = cache_key(&self.model_id, messages, config);
        self.cache.get(&key).ok_or(LlmError::ReplayMiss(key))
    }
}
