//! Append-only JSONL memory store.
//!
//! Every mutation appends one [`MemoryRecord`] line. On replay the first line
//! for an id creates the memory and later lines for the same id replace its
//! augmentation. [`MemoryStore::compact`] rewrites the log with one line per id.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use thiserror::Error;

use super::{AugmentedMemory, AuxiliaryClue, MemoryEntry, MemoryRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("memory id `{0}` already exists")]
    DuplicateId(String),
    #[error("invalid memory entry: {0}")]
    InvalidEntry(String),
    #[error("unknown memory id `{0}`")]
    UnknownId(String),
    #[error("embedding dimension mismatch: store expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("malformed record on line {line} of {path}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Inclusive window over `created_at` (UTC epoch seconds).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub start: i64,
    pub end: i64,
}

impl TimeWindow {
    pub fn new(start: i64, end: i64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Default)]
struct State {
    memories: HashMap<String, AugmentedMemory>,
    order: BTreeSet<(i64, String)>,
    log: Option<File>,
}

impl State {
    fn insert(&mut self, memory: AugmentedMemory) {
        self.order
            .insert((memory.entry.created_at, memory.entry.id.clone()));
        self.memories.insert(memory.entry.id.clone(), memory);
    }

    fn append(&mut self, memory: &AugmentedMemory) -> Result<(), StoreError> {
        if let Some(file) = self.log.as_mut() {
            let mut line = serde_json::to_string(&MemoryRecord::from(memory))?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

/// Memory repository with many concurrent readers and a single writer.
pub struct MemoryStore {
    path: Option<PathBuf>,
    dim: usize,
    state: RwLock<State>,
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("path", &self.path)
            .field("dim", &self.dim)
            .field("len", &self.len())
            .finish()
    }
}

impl MemoryStore {
    /// A store that lives only in memory.
    pub fn in_memory(dim: usize) -> Self {
        Self {
            path: None,
            dim,
            state: RwLock::new(State::default()),
        }
    }

    /// Opens (or creates) the log at `path`, replaying every record.
    ///
    /// Refuses to load a log whose embeddings do not have dimension `dim`.
    pub fn open(path: impl AsRef<Path>, dim: usize) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut state = State::default();
        if path.exists() {
            replay(&path, dim, &mut state)?;
        }
        state.log = Some(OpenOptions::new().create(true).append(true).open(&path)?);
        Ok(Self {
            path: Some(path),
            dim,
            state: RwLock::new(state),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.read().memories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put_memory(&self, entry: MemoryEntry) -> Result<String, StoreError> {
        entry.validate().map_err(StoreError::InvalidEntry)?;
        let mut state = self.write();
        if state.memories.contains_key(&entry.id) {
            return Err(StoreError::DuplicateId(entry.id));
        }
        let id = entry.id.clone();
        let memory = AugmentedMemory::bare(entry);
        state.append(&memory)?;
        state.insert(memory);
        Ok(id)
    }

    /// Attaches (or replaces) the clue and embedding of an existing memory.
    pub fn attach_augmentation(
        &self,
        id: &str,
        clue: AuxiliaryClue,
        embedding: Option<Vec<f64>>,
    ) -> Result<AugmentedMemory, StoreError> {
        if let Some(v) = &embedding {
            self.check_dim(v)?;
        }
        let mut state = self.write();
        let entry = state
            .memories
            .get(id)
            .map(|m| m.entry.clone())
            .ok_or_else(|| StoreError::UnknownId(id.to_string()))?;
        let memory = AugmentedMemory {
            entry,
            clue,
            embedding,
        };
        state.append(&memory)?;
        state.insert(memory.clone());
        Ok(memory)
    }

    /// Inserts a full record, as read from an ingest file.
    pub fn put_record(&self, record: MemoryRecord) -> Result<String, StoreError> {
        let clue = record.clue();
        let embedding = record.embedding.clone();
        let id = self.put_memory(record.entry())?;
        if clue.is_some() || embedding.is_some() {
            self.attach_augmentation(&id, clue.unwrap_or_default(), embedding)?;
        }
        Ok(id)
    }

    pub fn get_memory(&self, id: &str) -> Option<AugmentedMemory> {
        self.read().memories.get(id).cloned()
    }

    /// Snapshot of every memory created inside `window`, ordered by `(created_at, id)`.
    pub fn scan(&self, window: Option<TimeWindow>) -> Vec<AugmentedMemory> {
        let state = self.read();
        state
            .order
            .iter()
            .filter(|(t, _)| window.is_none_or(|w| w.contains(*t)))
            .map(|(_, id)| state.memories[id].clone())
            .collect()
    }

    /// Rewrites the log so that it holds exactly one line per memory.
    pub fn compact(&self) -> Result<(), StoreError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut state = self.write();
        let tmp = path.with_extension("jsonl.compact");
        {
            let mut out = File::create(&tmp)?;
            for (_, id) in &state.order {
                let line = serde_json::to_string(&MemoryRecord::from(&state.memories[id]))?;
                writeln!(out, "{line}")?;
            }
            out.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        state.log = Some(OpenOptions::new().append(true).open(path)?);
        Ok(())
    }

    pub fn flush(&self) -> Result<(), StoreError> {
        let mut state = self.write();
        if let Some(file) = state.log.as_mut() {
            file.flush()?;
            file.sync_data()?;
        }
        Ok(())
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), StoreError> {
        if v.len() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(())
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }
}

fn replay(path: &Path, dim: usize, state: &mut State) -> Result<(), StoreError> {
    let raw = fs::read(path)?;
    let ends_cleanly = raw.last().is_none_or(|b| *b == b'\n');
    let lines: Vec<String> = BufReader::new(raw.as_slice())
        .lines()
        .collect::<Result<_, _>>()?;
    let corrupt = |line: usize, message: String| StoreError::Corrupt {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: MemoryRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            // a torn final write is dropped rather than failing the whole load
            Err(e) if idx + 1 == lines.len() && !ends_cleanly => {
                tracing::warn!(line = idx + 1, error = %e, "dropping truncated trailing record");
                continue;
            }
            Err(e) => return Err(corrupt(idx + 1, e.to_string())),
        };
        if let Some(v) = &record.embedding {
            if v.len() != dim {
                return Err(StoreError::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
        }
        let memory = record.into_memory();
        match state.memories.get(&memory.entry.id) {
            Some(existing) if existing.entry != memory.entry => {
                return Err(corrupt(
                    idx + 1,
                    format!(
                        "record for `{}` changes the immutable entry fields",
                        memory.entry.id
                    ),
                ));
            }
            _ => {}
        }
        memory.entry.validate().map_err(|m| corrupt(idx + 1, m))?;
        state.insert(memory);
    }
    Ok(())
}
