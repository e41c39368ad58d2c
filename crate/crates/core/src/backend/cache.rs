use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CompletionRecord, Fingerprint};

const DEFAULT_SYNC_EVERY: usize = 32;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache entry {key} on line {line}: {reason}")]
    Corrupt {
        line: usize,
        key: String,
        reason: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: Fingerprint,
    record: CompletionRecord,
}

struct Inner {
    entries: HashMap<Fingerprint, CompletionRecord>,
    file: File,
    unsynced: usize,
}

/// Hit and miss counts since the cache was opened.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
}

impl CacheCounters {
    pub fn hit_rate(&self) -> Option<f64> {
        let total = self.hits + self.misses;
        (total > 0).then(|| self.hits as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub path: PathBuf,
    pub entries: usize,
    pub bytes: u64,
    pub per_model: BTreeMap<String, usize>,
}

/// Append-only JSON-lines store of completions keyed by request
/// fingerprint. Writes are serialized; the first record stored for a
/// fingerprint is the one returned forever after.
pub struct ResponseCache {
    path: PathBuf,
    inner: Mutex<Inner>,
    sync_every: usize,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ResponseCache {
    /// Opens or creates the cache at `path`. An unterminated final line
    /// left by an interrupted write is discarded; any other unreadable line
    /// is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw).map_err(io_err)?;

        let mut entries = HashMap::new();
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while offset < raw.len() {
            line_no += 1;
            let (line, terminated) = match raw[offset..].iter().position(|&b| b == b'\n') {
                Some(end) => (&raw[offset..offset + end], true),
                None => (&raw[offset..], false),
            };
            let parsed = std::str::from_utf8(line)
                .map_err(|e| e.to_string())
                .and_then(|s| serde_json::from_str::<Entry>(s).map_err(|e| e.to_string()));
            match parsed {
                Ok(entry) => {
                    if entry.key != entry.record.fingerprint {
                        return Err(CacheError::Corrupt {
                            line: line_no,
                            key: entry.key.to_string(),
                            reason: "key does not match record fingerprint".into(),
                        });
                    }
                    entries.entry(entry.key).or_insert(entry.record);
                }
                Err(_) if !terminated => {
                    log::warn!("{}: dropping incomplete final entry", path.display());
                    file.set_len(offset as u64).map_err(io_err)?;
                    file.seek(SeekFrom::End(0)).map_err(io_err)?;
                    break;
                }
                Err(_) if line.iter().all(u8::is_ascii_whitespace) => {}
                Err(reason) => {
                    return Err(CacheError::Corrupt {
                        line: line_no,
                        key: guess_key(line),
                        reason,
                    });
                }
            }
            offset += line.len() + 1;
        }

        Ok(ResponseCache {
            path,
            inner: Mutex::new(Inner {
                entries,
                file,
                unsynced: 0,
            }),
            sync_every: DEFAULT_SYNC_EVERY,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    /// Number of appended entries between fsyncs.
    pub fn with_sync_every(mut self, n: usize) -> Self {
        self.sync_every = n.max(1);
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Returns the stored record with `from_cache` set, counting a hit or a
    /// miss.
    pub fn lookup(&self, key: &Fingerprint) -> Option<CompletionRecord> {
        let found = self.peek(key);
        match found {
            Some(mut rec) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                rec.from_cache = true;
                Some(rec)
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    /// Lookup without touching counters.
    pub fn peek(&self, key: &Fingerprint) -> Option<CompletionRecord> {
        self.inner.lock().expect("cache lock").entries.get(key).cloned()
    }

    /// Persists `rec`. If another writer stored the same fingerprint first,
    /// that earlier record is returned instead.
    pub fn insert(&self, rec: CompletionRecord) -> Result<CompletionRecord, CacheError> {
        let mut inner = self.inner.lock().expect("cache lock");
        if let Some(existing) = inner.entries.get(&rec.fingerprint) {
            let mut existing = existing.clone();
            existing.from_cache = true;
            return Ok(existing);
        }
        let mut stored = rec.clone();
        stored.from_cache = false;
        let mut line = serde_json::to_string(&Entry {
            key: stored.fingerprint.clone(),
            record: stored.clone(),
        })
        .expect("entry serializes");
        line.push('\n');
        let io_err = |source| CacheError::Io {
            path: self.path.clone(),
            source,
        };
        inner.file.write_all(line.as_bytes()).map_err(io_err)?;
        inner.unsynced += 1;
        if inner.unsynced >= self.sync_every {
            inner.file.sync_data().map_err(io_err)?;
            inner.unsynced = 0;
        }
        inner.entries.insert(stored.fingerprint.clone(), stored);
        Ok(rec)
    }

    pub fn flush(&self) -> Result<(), CacheError> {
        let mut inner = self.inner.lock().expect("cache lock");
        if inner.unsynced > 0 {
            inner.file.sync_data().map_err(|source| CacheError::Io {
                path: self.path.clone(),
                source,
            })?;
            inner.unsynced = 0;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counters(&self) -> CacheCounters {
        CacheCounters {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn summary(&self) -> CacheSummary {
        let inner = self.inner.lock().expect("cache lock");
        let mut per_model = BTreeMap::new();
        for rec in inner.entries.values() {
            *per_model.entry(rec.model_id.clone()).or_default() += 1;
        }
        CacheSummary {
            path: self.path.clone(),
            entries: inner.entries.len(),
            bytes: fs::metadata(&self.path).map(|m| m.len()).unwrap_or(0),
            per_model,
        }
    }
}

impl Drop for ResponseCache {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            log::warn!("{e}");
        }
    }
}

fn guess_key(line: &[u8]) -> String {
    let text = String::from_utf8_lossy(line);
    serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("key").and_then(|k| k.as_str()).map(str::to_string))
        .unwrap_or_else(|| "<unreadable>".to_string())
}
