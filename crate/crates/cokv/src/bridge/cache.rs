//! Deduplicating coalition-utility cache with an append-only journal.
//!
//! Keys pair the game fingerprint with the canonical coalition hex key, so a
//! journal can hold evaluations from several tasks without any risk of
//! cross-contamination. Journal lines are
//! `{"key": hex, "utility": float, "fingerprint": hex}`, one JSON object per
//! line; loading replays the journal and skips corrupt lines, counting them.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::OracleError;

#[derive(Debug, Serialize, Deserialize)]
struct JournalLine {
    key: String,
    utility: f64,
    fingerprint: String,
}

/// What a journal replay found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JournalReport {
    pub entries: usize,
    pub corrupt_lines: usize,
}

pub struct EvalCache {
    entries: RwLock<HashMap<(String, String), f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
    journal: Option<Mutex<BufWriter<File>>>,
    journal_path: Option<PathBuf>,
}

impl EvalCache {
    /// Cache with no backing file.
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            journal: None,
            journal_path: None,
        }
    }

    /// Open (or create) a journal-backed cache at `path`, replaying any
    /// existing entries first.
    pub fn with_journal(path: &Path) -> Result<(Self, JournalReport), OracleError> {
        let mut entries = HashMap::new();
        let mut report = JournalReport { entries: 0, corrupt_lines: 0 };
        if path.exists() {
            let file = File::open(path)
                .map_err(|source| OracleError::Journal { path: path.to_path_buf(), source })?;
            for line in BufReader::new(file).lines() {
                let line = line
                    .map_err(|source| OracleError::Journal { path: path.to_path_buf(), source })?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<JournalLine>(&line) {
                    Ok(entry) => {
                        entries.insert((entry.fingerprint, entry.key), entry.utility);
                    }
                    Err(_) => report.corrupt_lines += 1,
                }
            }
        }
        report.entries = entries.len();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| OracleError::Journal { path: path.to_path_buf(), source })?;
        Ok((
            Self {
                entries: RwLock::new(entries),
                hits: AtomicU64::new(0),
                misses: AtomicU64::new(0),
                journal: Some(Mutex::new(BufWriter::new(file))),
                journal_path: Some(path.to_path_buf()),
            },
            report,
        ))
    }

    pub fn lookup(&self, fingerprint: &str, key: &str) -> Option<f64> {
        let found = self
            .entries
            .read()
            .expect("cache lock")
            .get(&(fingerprint.to_string(), key.to_string()))
            .copied();
        match found {
            Some(v) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(v)
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    /// Insert an evaluation and append it to the journal. Values are written
    /// with shortest-round-trip float formatting, so a replay restores the
    /// exact bits.
    pub fn record(&self, fingerprint: &str, key: &str, utility: f64) -> Result<(), OracleError> {
        self.entries
            .write()
            .expect("cache lock")
            .insert((fingerprint.to_string(), key.to_string()), utility);
        if let Some(journal) = &self.journal {
            let line = JournalLine {
                key: key.to_string(),
                utility,
                fingerprint: fingerprint.to_string(),
            };
            let path = self.journal_path.clone().unwrap_or_default();
            let mut writer = journal.lock().expect("journal lock");
            serde_json::to_writer(&mut *writer, &line)
                .map_err(|e| OracleError::Journal { path: path.clone(), source: e.into() })?;
            writer
                .write_all(b"\n")
                .and_then(|_| writer.flush())
                .map_err(|source| OracleError::Journal { path, source })?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

/// Write a compact snapshot of `cache` as a fresh journal at `path`
/// (deterministic order: sorted by fingerprint, then key).
pub fn persist_cache(cache: &EvalCache, path: &Path) -> Result<(), OracleError> {
    let entries = cache.entries.read().expect("cache lock");
    let mut sorted: Vec<(&(String, String), &f64)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let file = File::create(path)
        .map_err(|source| OracleError::Journal { path: path.to_path_buf(), source })?;
    let mut out = BufWriter::new(file);
    for ((fingerprint, key), utility) in sorted {
        let line = JournalLine {
            key: key.clone(),
            utility: *utility,
            fingerprint: fingerprint.clone(),
        };
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| OracleError::Journal { path: path.to_path_buf(), source: e.into() })?;
        out.write_all(b"\n")
            .map_err(|source| OracleError::Journal { path: path.to_path_buf(), source })?;
    }
    out.flush()
        .map_err(|source| OracleError::Journal { path: path.to_path_buf(), source })
}

/// Reopen a journal-backed cache; the counterpart of [`persist_cache`] and of
/// crash recovery (the journal is append-only, so a torn final line is just
/// one corrupt-line warning).
pub fn load_cache(path: &Path) -> Result<(EvalCache, JournalReport), OracleError> {
    EvalCache::with_journal(path)
}
