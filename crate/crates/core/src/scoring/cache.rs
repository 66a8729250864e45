//! Append-only score cache.
//!
//! One JSON object per line: `{"key": "<sha256 hex>", "logprob": <float>}`.
//! Keys hash the model name, rendered input, candidate phrase and scoring
//! flags, so entries survive reordering of prompts or examples.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    logprob: f64,
}

#[derive(Debug)]
pub struct ScoreCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, f64>>,
    writer: Mutex<BufWriter<File>>,
}

impl ScoreCache {
    /// Opens (or creates) the cache at `path`. Any unreadable line is
    /// reported as corruption rather than skipped.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |reason: String| Error::CacheCorrupt {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason,
                };
                let entry: CacheLine = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
                if entry.key.len() != 64 || !entry.key.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(corrupt(format!("malformed key {:?}", entry.key)));
                }
                if !entry.logprob.is_finite() {
                    return Err(corrupt("non-finite logprob".into()));
                }
                if let Some(old) = entries.insert(entry.key.clone(), entry.logprob) {
                    if old.to_bits() != entry.logprob.to_bits() {
                        return Err(corrupt(format!("conflicting values for key {}", entry.key)));
                    }
                }
            }
            if !text.is_empty() && !text.ends_with('\n') {
                return Err(Error::CacheCorrupt {
                    path: path.to_path_buf(),
                    line: text.lines().count(),
                    reason: "truncated final line".into(),
                });
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    /// Deletes the cache file, if any.
    pub fn reset(path: &Path) -> Result<()> {
        match std::fs::remove_file(path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.read().expect("cache lock poisoned").get(key).copied()
    }

    /// Appends entries not yet present and flushes them to disk.
    pub fn insert_many(&self, items: &[(String, f64)]) -> Result<()> {
        let mut writer = self.writer.lock().expect("cache lock poisoned");
        let mut entries = self.entries.write().expect("cache lock poisoned");
        for (key, logprob) in items {
            if entries.contains_key(key) {
                continue;
            }
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                logprob: *logprob,
            })
            .map_err(|e| Error::Invariant(e.to_string()))?;
            writeln!(writer, "{line}")?;
            entries.insert(key.clone(), *logprob);
        }
        writer.flush()?;
        Ok(())
    }
}

/// Content hash identifying one (model, input, candidate, flags) score.
pub fn cache_key(model: &str, input: &str, candidate: &str, length_norm: bool) -> String {
    let material = serde_json::to_string(&(model, input, candidate, length_norm)).expect("string tuple serializes");
    let digest = Sha256::digest(material.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
