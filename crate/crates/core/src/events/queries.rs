//! The fixed query surface over one lesson's events. Query shapes are fixed
//! here; callers choose only the lesson.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::store::{EventStore, StorageFailure};
use crate::domain::{timestamp_millis, ChatSender, EventBody, EventCategory, InteractionEvent, Pseudonym, VideoAction};

/// Chat text longer than this is cut when it leaves the query layer.
pub const CHAT_TRUNCATION_CHARS: usize = 300;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryBlock {
    pub lesson_id: String,
    pub total_students: u64,
    pub total_sessions: u64,
    pub total_events: u64,
    /// Every category, zero-filled.
    pub counts: BTreeMap<EventCategory, u64>,
    pub code_executions_succeeded: u64,
}

impl SummaryBlock {
    pub fn empty(lesson_id: &str) -> Self {
        SummaryBlock {
            lesson_id: lesson_id.to_string(),
            total_students: 0,
            total_sessions: 0,
            total_events: 0,
            counts: EventCategory::ALL.into_iter().map(|c| (c, 0)).collect(),
            code_executions_succeeded: 0,
        }
    }

    pub fn count(&self, category: EventCategory) -> u64 {
        self.counts.get(&category).copied().unwrap_or(0)
    }

    /// Successful share of code executions, as a percentage.
    pub fn execution_success_rate(&self) -> Option<f64> {
        let total = self.count(EventCategory::CodeExecution);
        (total > 0).then(|| 100.0 * self.code_executions_succeeded as f64 / total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatEntry {
    #[serde(with = "timestamp_millis")]
    pub timestamp: DateTime<Utc>,
    pub sender: ChatSender,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    #[serde(with = "timestamp_millis")]
    pub timestamp: DateTime<Utc>,
    pub action: VideoAction,
    pub position_s: f64,
    pub seek_from_s: Option<f64>,
    pub seek_to_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodeEntry {
    Execution {
        #[serde(with = "timestamp_millis")]
        timestamp: DateTime<Utc>,
        cell_id: String,
        success: bool,
        error_message: Option<String>,
    },
    Checkpoint {
        #[serde(with = "timestamp_millis")]
        timestamp: DateTime<Utc>,
        checkpoint_id: String,
        cell_id: String,
        passed: bool,
        reasoning: String,
    },
}

impl CodeEntry {
    pub fn timestamp(&self) -> DateTime<Utc> {
        match self {
            CodeEntry::Execution { timestamp, .. } | CodeEntry::Checkpoint { timestamp, .. } => *timestamp,
        }
    }
}

/// The three stream families, grouped by pseudonym and time-ordered.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LessonStreams {
    pub chat: BTreeMap<Pseudonym, Vec<ChatEntry>>,
    pub video: BTreeMap<Pseudonym, Vec<VideoEntry>>,
    pub code: BTreeMap<Pseudonym, Vec<CodeEntry>>,
}

impl LessonStreams {
    pub fn pseudonyms(&self) -> BTreeSet<&Pseudonym> {
        self.chat.keys().chain(self.video.keys()).chain(self.code.keys()).collect()
    }
}

/// Streams and summary taken from the same read.
#[derive(Clone, Debug, PartialEq)]
pub struct LessonSnapshot {
    pub streams: LessonStreams,
    pub summary: SummaryBlock,
}

fn truncate_chars(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((cut, _)) => text[..cut].to_string(),
        None => text.to_string(),
    }
}

pub fn summarize(lesson_id: &str, events: &[InteractionEvent]) -> SummaryBlock {
    let mut summary = SummaryBlock::empty(lesson_id);
    let mut students = BTreeSet::new();
    let mut sessions = BTreeSet::new();
    for event in events {
        students.insert(&event.pseudonym);
        sessions.insert(&event.session_id);
        *summary.counts.entry(event.category()).or_default() += 1;
        if let EventBody::CodeExecution(p) = &event.body {
            summary.code_executions_succeeded += u64::from(p.success);
        }
    }
    summary.total_students = students.len() as u64;
    summary.total_sessions = sessions.len() as u64;
    summary.total_events = events.len() as u64;
    summary
}

pub fn build_streams(events: &[InteractionEvent]) -> LessonStreams {
    let mut ordered: Vec<&InteractionEvent> = events.iter().collect();
    ordered.sort_by_key(|e| (e.timestamp, e.event_id));
    let mut streams = LessonStreams::default();
    for event in ordered {
        let who = event.pseudonym.clone();
        let timestamp = event.timestamp;
        match &event.body {
            EventBody::ChatMessage(p) => streams.chat.entry(who).or_default().push(ChatEntry {
                timestamp,
                sender: p.sender,
                text: truncate_chars(&p.text, CHAT_TRUNCATION_CHARS),
            }),
            EventBody::VideoPlayback(p) => streams.video.entry(who).or_default().push(VideoEntry {
                timestamp,
                action: p.action,
                position_s: p.position_s,
                seek_from_s: p.seek_from_s,
                seek_to_s: p.seek_to_s,
            }),
            EventBody::CodeExecution(p) => streams.code.entry(who).or_default().push(CodeEntry::Execution {
                timestamp,
                cell_id: p.cell_id.clone(),
                success: p.success,
                error_message: p.error_message.clone(),
            }),
            EventBody::CheckpointEvaluation(p) => streams.code.entry(who).or_default().push(CodeEntry::Checkpoint {
                timestamp,
                checkpoint_id: p.checkpoint_id.clone(),
                cell_id: p.cell_id.clone(),
                passed: p.passed,
                reasoning: p.reasoning.clone(),
            }),
            _ => {}
        }
    }
    streams
}

/// Read-only query handle. Holds no salt and exposes no identity lookup.
#[derive(Clone)]
pub struct LessonQueries {
    store: Arc<dyn EventStore>,
}

impl LessonQueries {
    pub fn new(store: Arc<dyn EventStore>) -> Self {
        LessonQueries { store }
    }

    pub fn query_lesson_streams(&self, lesson_id: &str) -> Result<LessonStreams, StorageFailure> {
        Ok(build_streams(&self.store.read_lesson(lesson_id)?))
    }

    pub fn lesson_summary(&self, lesson_id: &str) -> Result<SummaryBlock, StorageFailure> {
        Ok(summarize(lesson_id, &self.store.read_lesson(lesson_id)?))
    }

    /// Streams and summary from exactly one store read.
    pub fn snapshot(&self, lesson_id: &str) -> Result<LessonSnapshot, StorageFailure> {
        let events = self.store.read_lesson(lesson_id)?;
        Ok(LessonSnapshot { streams: build_streams(&events), summary: summarize(lesson_id, &events) })
    }

    pub fn lessons_with_activity(&self) -> Result<Vec<SummaryBlock>, StorageFailure> {
        self.store.lessons()?.iter().map(|l| self.lesson_summary(l)).collect()
    }

    pub fn store_reads(&self) -> u64 {
        self.store.reads()
    }
}
