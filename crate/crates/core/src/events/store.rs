//! Append-only event storage: one JSONL segment per (lesson, UTC day) plus an
//! in-memory index rebuilt from the segments at startup.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};

use crate::domain::{EventBody, EventId, InteractionEvent, Pseudonym};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StorageFailure {
    #[error("event store unavailable: {0}")]
    Unavailable(String),
    #[error("event store i/o failed: {0}")]
    Io(String),
    #[error("lesson id `{0}` cannot name a segment directory")]
    BadLessonId(String),
}

/// An event ready to be stored: already pseudonymized, not yet numbered.
#[derive(Clone, Debug, PartialEq)]
pub struct NewEvent {
    pub pseudonym: Pseudonym,
    pub lesson_id: String,
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    pub body: EventBody,
}

/// Append and read; there is deliberately no update or delete.
pub trait EventStore: Send + Sync {
    fn append(&self, event: NewEvent) -> Result<InteractionEvent, StorageFailure>;
    /// Every event of one lesson in append order.
    fn read_lesson(&self, lesson_id: &str) -> Result<Vec<InteractionEvent>, StorageFailure>;
    /// Lessons with at least one event, sorted.
    fn lessons(&self) -> Result<Vec<String>, StorageFailure>;
    /// Number of read operations served so far.
    fn reads(&self) -> u64;
    fn ping(&self) -> Result<(), StorageFailure>;
}

#[derive(Default)]
struct Inner {
    next_id: u64,
    index: BTreeMap<String, Vec<InteractionEvent>>,
    files: HashMap<PathBuf, File>,
}

pub struct JsonlEventStore {
    root: Option<PathBuf>,
    inner: Mutex<Inner>,
    reads: AtomicU64,
    down: AtomicBool,
}

impl std::fmt::Debug for JsonlEventStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonlEventStore").field("root", &self.root).finish()
    }
}

fn io(e: impl std::fmt::Display) -> StorageFailure {
    StorageFailure::Io(e.to_string())
}

/// Lesson ids become directory names, so dot-leading ids are refused.
fn safe_dir_name(lesson_id: &str) -> bool {
    crate::domain::check_slug(lesson_id).is_ok() && !lesson_id.starts_with('.')
}

pub fn segment_path(root: &Path, lesson_id: &str, timestamp: &DateTime<Utc>) -> PathBuf {
    root.join(lesson_id).join(format!("{}.jsonl", timestamp.format("%Y-%m-%d")))
}

/// Cuts a partial last line left by a crash mid-append, so the next append
/// starts on a fresh line.
fn drop_torn_tail(segment: &Path) -> Result<(), StorageFailure> {
    let bytes = std::fs::read(segment).map_err(io)?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        tracing::warn!(segment = %segment.display(), bytes = bytes.len() - keep, "dropping torn trailing line");
        OpenOptions::new().write(true).open(segment).map_err(io)?.set_len(keep as u64).map_err(io)?;
    }
    Ok(())
}

impl JsonlEventStore {
    /// Opens (or creates) a store under `root`, rebuilding the index.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StorageFailure> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root).map_err(io)?;
        let mut inner = Inner { next_id: 1, ..Default::default() };
        for lesson_dir in std::fs::read_dir(&root).map_err(io)? {
            let lesson_dir = lesson_dir.map_err(io)?.path();
            if !lesson_dir.is_dir() {
                continue;
            }
            let mut segments: Vec<PathBuf> = std::fs::read_dir(&lesson_dir)
                .map_err(io)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            segments.sort();
            for segment in segments {
                drop_torn_tail(&segment)?;
                let reader = BufReader::new(File::open(&segment).map_err(io)?);
                for (n, line) in reader.lines().enumerate() {
                    let line = line.map_err(io)?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<InteractionEvent>(&line) {
                        Ok(event) => {
                            inner.next_id = inner.next_id.max(event.event_id.0 + 1);
                            inner.index.entry(event.lesson_id.clone()).or_default().push(event);
                        }
                        Err(e) => tracing::warn!(segment = %segment.display(), line = n + 1, error = %e, "skipping unreadable event line"),
                    }
                }
            }
        }
        for events in inner.index.values_mut() {
            events.sort_by_key(|e| e.event_id);
        }
        Ok(JsonlEventStore { root: Some(root), inner: Mutex::new(inner), reads: AtomicU64::new(0), down: AtomicBool::new(false) })
    }

    /// A store that keeps events only in memory.
    pub fn in_memory() -> Self {
        JsonlEventStore {
            root: None,
            inner: Mutex::new(Inner { next_id: 1, ..Default::default() }),
            reads: AtomicU64::new(0),
            down: AtomicBool::new(false),
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Fault injection: a switched-off store fails every operation.
    pub fn set_available(&self, available: bool) {
        self.down.store(!available, Ordering::SeqCst);
    }

    pub fn total(&self) -> usize {
        self.inner.lock().expect("event index poisoned").index.values().map(Vec::len).sum()
    }

    fn check(&self) -> Result<(), StorageFailure> {
        if self.down.load(Ordering::SeqCst) {
            Err(StorageFailure::Unavailable("event store switched off".into()))
        } else {
            Ok(())
        }
    }
}

impl EventStore for JsonlEventStore {
    fn append(&self, event: NewEvent) -> Result<InteractionEvent, StorageFailure> {
        self.check()?;
        if !safe_dir_name(&event.lesson_id) {
            return Err(StorageFailure::BadLessonId(event.lesson_id));
        }
        let mut inner = self.inner.lock().expect("event index poisoned");
        let stored = InteractionEvent {
            event_id: EventId(inner.next_id),
            pseudonym: event.pseudonym,
            lesson_id: event.lesson_id,
            session_id: event.session_id,
            timestamp: event.timestamp,
            body: event.body,
        };
        if let Some(root) = &self.root {
            let path = segment_path(root, &stored.lesson_id, &stored.timestamp);
            let mut line = serde_json::to_vec(&stored).map_err(io)?;
            line.push(b'\n');
            if !inner.files.contains_key(&path) {
                std::fs::create_dir_all(path.parent().expect("segment has a parent")).map_err(io)?;
                let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
                inner.files.insert(path.clone(), file);
            }
            inner.files.get_mut(&path).expect("just inserted").write_all(&line).map_err(io)?;
        }
        inner.next_id += 1;
        inner.index.entry(stored.lesson_id.clone()).or_default().push(stored.clone());
        Ok(stored)
    }

    fn read_lesson(&self, lesson_id: &str) -> Result<Vec<InteractionEvent>, StorageFailure> {
        self.check()?;
        self.reads.fetch_add(1, Ordering::SeqCst);
        Ok(self.inner.lock().expect("event index poisoned").index.get(lesson_id).cloned().unwrap_or_default())
    }

    fn lessons(&self) -> Result<Vec<String>, StorageFailure> {
        self.check()?;
        self.reads.fetch_add(1, Ordering::SeqCst);
        Ok(self.inner.lock().expect("event index poisoned").index.keys().cloned().collect())
    }

    fn reads(&self) -> u64 {
        self.reads.load(Ordering::SeqCst)
    }

    fn ping(&self) -> Result<(), StorageFailure> {
        self.check()?;
        if let Some(root) = &self.root {
            if !root.is_dir() {
                return Err(StorageFailure::Unavailable(format!("{} is missing", root.display())));
            }
        }
        Ok(())
    }
}
