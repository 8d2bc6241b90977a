//! On-disk response cache with single-flight deduplication.
//!
//! The store is an append-only JSONL file keyed by request digest, one
//! record per key; the first record wins on reload. Concurrent callers
//! holding the same key produce at most one upstream call.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    text: String,
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

struct Store {
    entries: HashMap<String, CacheRecord>,
    file: Option<File>,
}

/// Caching wrapper around any backend.
pub struct CachedBackend<B> {
    inner: B,
    store: Mutex<Store>,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    path: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: ChatBackend> CachedBackend<B> {
    /// Open (or create) the cache file at `path` and wrap `inner`.
    ///
    /// A corrupt record disables persistence for the run with a warning;
    /// completions still flow, uncached.
    pub fn open(inner: B, path: &Path) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        let mut corrupt = false;
        if path.exists() {
            let file = File::open(path)
                .map_err(|e| BackendError::Cache(format!("open {}: {e}", path.display())))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line =
                    line.map_err(|e| BackendError::Cache(format!("read line {}: {e}", idx + 1)))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        entries.entry(rec.key.clone()).or_insert(rec);
                    }
                    Err(e) => {
                        eprintln!(
                            "warning: cache {} line {} is corrupt ({e}); continuing uncached writes",
                            path.display(),
                            idx + 1
                        );
                        corrupt = true;
                    }
                }
            }
        }
        let file = if corrupt {
            None
        } else {
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| BackendError::Cache(format!("append {}: {e}", path.display())))?,
            )
        };
        Ok(CachedBackend {
            inner,
            store: Mutex::new(Store { entries, file }),
            inflight: Mutex::new(HashMap::new()),
            path: path.to_path_buf(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    /// The wrapped backend, for instrumentation.
    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn lookup(&self, key: &str) -> Option<ChatResponse> {
        let store = self.store.lock().unwrap();
        store.entries.get(key).map(|rec| ChatResponse {
            text: rec.text.clone(),
            prompt_tokens: rec.prompt_tokens,
            completion_tokens: rec.completion_tokens,
            from_cache: true,
        })
    }

    fn persist(&self, key: &str, resp: &ChatResponse) {
        let rec = CacheRecord {
            key: key.to_string(),
            text: resp.text.clone(),
            prompt_tokens: resp.prompt_tokens,
            completion_tokens: resp.completion_tokens,
        };
        let mut store = self.store.lock().unwrap();
        if let Some(file) = store.file.as_mut() {
            let line = serde_json::to_string(&rec).expect("cache record serializes");
            if let Err(e) = writeln!(file, "{line}") {
                eprintln!(
                    "warning: cache {} write failed ({e}); continuing uncached",
                    self.path.display()
                );
                store.file = None;
            }
        }
        store.entries.insert(key.to_string(), rec);
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = req.cache_key().0;
        if let Some(hit) = self.lookup(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        // Single-flight: one lock object per in-flight key. Losers of the
        // race re-check the store under the key lock and take the hit path.
        let flight = {
            let mut inflight = self.inflight.lock().unwrap();
            inflight.entry(key.clone()).or_default().clone()
        };
        let _guard = flight.lock().unwrap();
        if let Some(hit) = self.lookup(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let resp = self.inner.complete(req)?;
        self.persist(&key, &resp);
        self.inflight.lock().unwrap().remove(&key);
        Ok(ChatResponse {
            from_cache: false,
            ..resp
        })
    }

    fn fingerprint(&self) -> String {
        format!("cached({})", self.inner.fingerprint())
    }
}
