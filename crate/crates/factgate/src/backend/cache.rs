//! Content-addressed response cache.
//!
//! Append-only JSONL file, one [`CacheEntry`] per line, keyed by the SHA-256
//! digest of `backend_id \x1f model_id \x1f prompt`. The cache is the single
//! source of truth for expensive calls: a warm cache answers repeat queries
//! without touching the wrapped backend, which is what makes interrupted
//! scoring runs resumable.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendRequest, TokenDistribution};

/// SHA-256 hex digest of `backend_id \x1f model_id \x1f prompt`.
pub fn cache_key(backend_id: &str, model_id: &str, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(backend_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(model_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(prompt.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// One cached backend response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub backend_id: String,
    pub model_id: String,
    pub request: BackendRequest,
    pub distribution: TokenDistribution,
    /// Unix timestamp (seconds) when the entry was written.
    pub created_at: u64,
}

impl CacheEntry {
    /// The stored key must match a recomputation from the stored fields.
    pub fn verify_key(&self) -> bool {
        cache_key(&self.backend_id, &self.model_id, &self.request.prompt) == self.key
    }
}

/// Wraps any backend with a persistent response cache and instrumented
/// hit/miss counters.
pub struct CachedBackend<B> {
    inner: B,
    entries: Mutex<HashMap<String, TokenDistribution>>,
    writer: Mutex<Option<BufWriter<File>>>,
    path: Option<PathBuf>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: Backend> CachedBackend<B> {
    /// Open (or create) the cache file at `path`, loading existing entries.
    /// Entries whose key does not recompute from their fields are rejected.
    pub fn open(inner: B, path: &Path) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path)
                .map_err(|e| BackendError::Cache(format!("open {}: {e}", path.display())))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line =
                    line.map_err(|e| BackendError::Cache(format!("read line {}: {e}", i + 1)))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line)
                    .map_err(|e| BackendError::Cache(format!("line {}: {e}", i + 1)))?;
                if !entry.verify_key() {
                    return Err(BackendError::Cache(format!(
                        "line {}: key does not match its contents",
                        i + 1
                    )));
                }
                // Last entry wins on duplicate keys.
                entries.insert(entry.key, entry.distribution);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Cache(format!("append {}: {e}", path.display())))?;
        Ok(CachedBackend {
            inner,
            entries: Mutex::new(entries),
            writer: Mutex::new(Some(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    /// Cache without a backing file; useful in tests.
    pub fn in_memory(inner: B) -> Self {
        CachedBackend {
            inner,
            entries: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
            path: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Number of queries answered by the wrapped backend (cache misses).
    pub fn backend_queries(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn persist(&self, entry: &CacheEntry) -> Result<(), BackendError> {
        let mut guard = self.writer.lock().expect("cache writer lock");
        if let Some(writer) = guard.as_mut() {
            let line = serde_json::to_string(entry)
                .map_err(|e| BackendError::Cache(format!("serialize entry: {e}")))?;
            writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .and_then(|_| writer.flush())
                .map_err(|e| BackendError::Cache(format!("write entry: {e}")))?;
        }
        Ok(())
    }
}

impl<B> std::fmt::Debug for CachedBackend<B> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CachedBackend")
            .field("path", &self.path)
            .field("entries", &self.entries.lock().map(|e| e.len()).unwrap_or(0))
            .field("hits", &self.hits)
            .field("misses", &self.misses)
            .finish()
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn query(&self, request: &BackendRequest) -> Result<TokenDistribution, BackendError> {
        request.validate()?;
        let key = cache_key(self.inner.id(), self.inner.model_id(), &request.prompt);
        if let Some(found) = self.entries.lock().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(found.clone());
        }
        let distribution = self.inner.query(request)?;
        self.misses.fetch_add(1, Ordering::SeqCst);
        let entry = CacheEntry {
            key: key.clone(),
            backend_id: self.inner.id().to_string(),
            model_id: self.inner.model_id().to_string(),
            request: request.clone(),
            distribution: distribution.clone(),
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        self.persist(&entry)?;
        self.entries.lock().expect("cache lock").insert(key, distribution.clone());
        Ok(distribution)
    }
}
