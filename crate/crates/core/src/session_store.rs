//! Durable per-student session state and instructor conversations.
//!
//! Two engines implement the same traits: [`RedbStore`] for durable use and
//! [`MemoryStore`] for tests. Writes are single-key and atomic in both.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use redb::{Database, ReadableTable, TableDefinition};
use tokio::sync::OwnedMutexGuard;

use crate::domain::{InvalidId, SessionKey, SessionState};
use crate::feedback::Conversation;
use crate::lesson::LessonContent;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("no record for `{0}`")]
    NotFound(String),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error(transparent)]
    InvalidId(#[from] InvalidId),
    #[error("stored record for `{key}` is corrupt: {message}")]
    Corrupt { key: String, message: String },
}

pub trait SessionStore: Send + Sync {
    fn load(&self, key: &SessionKey) -> Result<SessionState, StoreError>;
    fn save(&self, state: &SessionState) -> Result<(), StoreError>;
    /// Inserts `state` unless its key already exists. Returns the stored
    /// state and whether this call created it.
    fn insert_if_absent(&self, state: SessionState) -> Result<(SessionState, bool), StoreError>;
    /// Cheap reachability probe for health checks.
    fn ping(&self) -> Result<(), StoreError>;

    /// Creates the session for `(user_id, lesson)` with the lesson's editable
    /// cells at their initial source. Idempotent: a second call returns the
    /// existing state untouched.
    fn create(&self, user_id: &str, lesson: &LessonContent) -> Result<(SessionState, bool), StoreError> {
        let key = SessionKey::new(user_id, &lesson.lesson_id)?;
        self.insert_if_absent(initial_state(key, lesson))
    }
}

pub trait ConversationStore: Send + Sync {
    fn load_conversation(&self, conversation_id: &str) -> Result<Conversation, StoreError>;
    fn save_conversation(&self, conversation: &Conversation) -> Result<(), StoreError>;
}

pub fn initial_state(key: SessionKey, lesson: &LessonContent) -> SessionState {
    let mut state = SessionState::empty(key);
    for cell in lesson.editable_cells() {
        state.cell_contents.insert(cell.cell_id.clone(), cell.initial_source.clone());
    }
    state
}

fn encode<T: serde::Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("session records always serialize")
}

fn decode<T: serde::de::DeserializeOwned>(key: &str, bytes: &[u8]) -> Result<T, StoreError> {
    serde_json::from_slice(bytes).map_err(|e| StoreError::Corrupt { key: key.to_string(), message: e.to_string() })
}

// ---------------------------------------------------------------------------

/// In-process store. `set_available(false)` simulates an outage.
#[derive(Default)]
pub struct MemoryStore {
    sessions: Mutex<HashMap<String, Vec<u8>>>,
    conversations: Mutex<HashMap<String, Vec<u8>>>,
    down: AtomicBool,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_available(&self, available: bool) {
        self.down.store(!available, Ordering::SeqCst);
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("store poisoned").len()
    }

    fn check(&self) -> Result<(), StoreError> {
        if self.down.load(Ordering::SeqCst) {
            Err(StoreError::StorageUnavailable("memory store switched off".into()))
        } else {
            Ok(())
        }
    }
}

impl SessionStore for MemoryStore {
    fn load(&self, key: &SessionKey) -> Result<SessionState, StoreError> {
        self.check()?;
        let sessions = self.sessions.lock().expect("store poisoned");
        let bytes = sessions.get(key.as_str()).ok_or_else(|| StoreError::NotFound(key.to_string()))?;
        decode(key.as_str(), bytes)
    }

    fn save(&self, state: &SessionState) -> Result<(), StoreError> {
        self.check()?;
        self.sessions.lock().expect("store poisoned").insert(state.session_key.to_string(), encode(state));
        Ok(())
    }

    fn insert_if_absent(&self, state: SessionState) -> Result<(SessionState, bool), StoreError> {
        self.check()?;
        let mut sessions = self.sessions.lock().expect("store poisoned");
        let key = state.session_key.to_string();
        if let Some(bytes) = sessions.get(&key) {
            return Ok((decode(&key, bytes)?, false));
        }
        sessions.insert(key, encode(&state));
        Ok((state, true))
    }

    fn ping(&self) -> Result<(), StoreError> {
        self.check()
    }
}

impl ConversationStore for MemoryStore {
    fn load_conversation(&self, conversation_id: &str) -> Result<Conversation, StoreError> {
        self.check()?;
        let conversations = self.conversations.lock().expect("store poisoned");
        let bytes = conversations.get(conversation_id).ok_or_else(|| StoreError::NotFound(conversation_id.to_string()))?;
        decode(conversation_id, bytes)
    }

    fn save_conversation(&self, conversation: &Conversation) -> Result<(), StoreError> {
        self.check()?;
        self.conversations
            .lock()
            .expect("store poisoned")
            .insert(conversation.conversation_id.clone(), encode(conversation));
        Ok(())
    }
}

// ---------------------------------------------------------------------------

const SESSIONS: TableDefinition<&str, &[u8]> = TableDefinition::new("sessions");
const CONVERSATIONS: TableDefinition<&str, &[u8]> = TableDefinition::new("conversations");

/// Embedded transactional key-value store backed by one redb file.
pub struct RedbStore {
    db: Database,
}

impl std::fmt::Debug for RedbStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("RedbStore")
    }
}

fn unavailable(e: impl std::fmt::Display) -> StoreError {
    StoreError::StorageUnavailable(e.to_string())
}

impl RedbStore {
    /// Opens the database at `path`, creating it and its tables if needed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        if let Some(parent) = path.as_ref().parent() {
            std::fs::create_dir_all(parent).map_err(unavailable)?;
        }
        let db = Database::create(path.as_ref()).map_err(unavailable)?;
        let tx = db.begin_write().map_err(unavailable)?;
        tx.open_table(SESSIONS).map_err(unavailable)?;
        tx.open_table(CONVERSATIONS).map_err(unavailable)?;
        tx.commit().map_err(unavailable)?;
        Ok(RedbStore { db })
    }

    fn get(&self, table: TableDefinition<&str, &[u8]>, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let tx = self.db.begin_read().map_err(unavailable)?;
        let t = tx.open_table(table).map_err(unavailable)?;
        Ok(t.get(key).map_err(unavailable)?.map(|v| v.value().to_vec()))
    }

    fn put(&self, table: TableDefinition<&str, &[u8]>, key: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let tx = self.db.begin_write().map_err(unavailable)?;
        {
            let mut t = tx.open_table(table).map_err(unavailable)?;
            t.insert(key, bytes).map_err(unavailable)?;
        }
        tx.commit().map_err(unavailable)
    }
}

impl SessionStore for RedbStore {
    fn load(&self, key: &SessionKey) -> Result<SessionState, StoreError> {
        let bytes = self.get(SESSIONS, key.as_str())?.ok_or_else(|| StoreError::NotFound(key.to_string()))?;
        decode(key.as_str(), &bytes)
    }

    fn save(&self, state: &SessionState) -> Result<(), StoreError> {
        self.put(SESSIONS, state.session_key.as_str(), &encode(state))
    }

    fn insert_if_absent(&self, state: SessionState) -> Result<(SessionState, bool), StoreError> {
        let key = state.session_key.to_string();
        // One write transaction covers the check and the insert.
        let tx = self.db.begin_write().map_err(unavailable)?;
        let existing = {
            let mut t = tx.open_table(SESSIONS).map_err(unavailable)?;
            let existing = t.get(key.as_str()).map_err(unavailable)?.map(|v| v.value().to_vec());
            if existing.is_none() {
                t.insert(key.as_str(), encode(&state).as_slice()).map_err(unavailable)?;
            }
            existing
        };
        match existing {
            Some(bytes) => {
                tx.abort().map_err(unavailable)?;
                Ok((decode(&key, &bytes)?, false))
            }
            None => {
                tx.commit().map_err(unavailable)?;
                Ok((state, true))
            }
        }
    }

    fn ping(&self) -> Result<(), StoreError> {
        let tx = self.db.begin_read().map_err(unavailable)?;
        tx.open_table(SESSIONS).map_err(unavailable)?;
        Ok(())
    }
}

impl ConversationStore for RedbStore {
    fn load_conversation(&self, conversation_id: &str) -> Result<Conversation, StoreError> {
        let bytes = self
            .get(CONVERSATIONS, conversation_id)?
            .ok_or_else(|| StoreError::NotFound(conversation_id.to_string()))?;
        decode(conversation_id, &bytes)
    }

    fn save_conversation(&self, conversation: &Conversation) -> Result<(), StoreError> {
        self.put(CONVERSATIONS, &conversation.conversation_id, &encode(conversation))
    }
}

// ---------------------------------------------------------------------------

/// Per-key async mutual exclusion. Teaching turns, grading and cell edits
/// share one instance keyed by session; conversations use another.
#[derive(Default)]
pub struct KeyedLocks {
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl KeyedLocks {
    pub fn new() -> Self {
        Self::default()
    }

    pub async fn lock(&self, key: &str) -> OwnedMutexGuard<()> {
        let lock = self
            .locks
            .lock()
            .expect("lock table poisoned")
            .entry(key.to_string())
            .or_default()
            .clone();
        lock.lock_owned().await
    }
}
