//! Instructor feedback: one fixed pull of a lesson's streams, assembled into a
//! plain-text document joined with lesson metadata, then narrated by an agent
//! that has no tools. Conversations freeze their document on creation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{timestamp_millis, ChatSender, EventCategory, Pseudonym, VideoAction};
use crate::events::{CodeEntry, LessonQueries, LessonStreams, StorageFailure, SummaryBlock};
use crate::gateway::{AgentSpec, Bindings, GatewayError, ModelGateway};
use crate::lesson::{CellKind, LessonCatalog, LessonContent};
use crate::session_store::{ConversationStore, KeyedLocks, StoreError};

/// Default upper bound on the assembled document, in characters.
pub const DEFAULT_CONTEXT_BUDGET: usize = 120_000;

pub const NO_ACTIVITY_NOTICE: &str = "No student activity recorded for this lesson.";

/// Marks each student's final video event so drop-off points stand out.
pub const LAST_VIDEO_MARK: &str = "[last video activity]";

#[derive(Debug, thiserror::Error)]
pub enum FeedbackError {
    #[error("the question is empty")]
    EmptyQuestion,
    #[error("no conversation `{0}`")]
    ConversationNotFound(String),
    #[error("conversation `{conversation}` belongs to lesson `{lesson}`")]
    LessonMismatch { conversation: String, lesson: String },
    #[error("feedback agent unavailable: {0}")]
    GatewayFailure(GatewayError),
    #[error(transparent)]
    Storage(#[from] StorageFailure),
    #[error(transparent)]
    ConversationStorage(StoreError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextDocument {
    pub lesson_id: String,
    pub summary: SummaryBlock,
    pub summary_text: String,
    pub metadata_section: String,
    /// Per-pseudonym narrative of the lesson's activity.
    pub activity_section: String,
    /// The complete document handed to the feedback agent.
    pub assembled_text: String,
    pub dropped_events: usize,
    #[serde(with = "timestamp_millis")]
    pub assembly_timestamp: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub lesson_id: String,
    pub context: ContextDocument,
    pub turns: Vec<ConversationTurn>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub conversation_id: String,
    pub answer: String,
}

fn clock(seconds: f64) -> String {
    let total = seconds.max(0.0).round() as u64;
    format!("{:02}:{:02}", total / 60, total % 60)
}

fn category_label(category: EventCategory) -> &'static str {
    match category {
        EventCategory::VideoPlayback => "Video playback events",
        EventCategory::ChatMessage => "Chat messages",
        EventCategory::CodeExecution => "Code executions",
        EventCategory::CodeEditor => "Code editor interactions",
        EventCategory::SessionManagement => "Session management events",
        EventCategory::CheckpointEvaluation => "Checkpoint evaluations",
        EventCategory::Error => "Error events",
        EventCategory::Other => "Other events",
    }
}

pub fn render_summary(summary: &SummaryBlock) -> String {
    let mut out = String::from("LESSON SUMMARY\n");
    let _ = writeln!(out, "Lesson: {}", summary.lesson_id);
    let _ = writeln!(out, "Students: {}", summary.total_students);
    let _ = writeln!(out, "Sessions: {}", summary.total_sessions);
    let _ = writeln!(out, "Total events: {}", summary.total_events);
    for category in EventCategory::ALL {
        let _ = write!(out, "{}: {}", category_label(category), summary.count(category));
        if category == EventCategory::CodeExecution {
            let _ = write!(out, " ({} succeeded)", summary.code_executions_succeeded);
        }
        out.push('\n');
    }
    out
}

pub fn render_metadata(lesson: Option<&LessonContent>) -> String {
    let mut out = String::from("LESSON METADATA\n");
    let Some(lesson) = lesson else {
        out.push_str("No lesson metadata is available for this lesson.\n");
        return out;
    };
    let _ = writeln!(out, "Title: {}", lesson.title);
    let _ = writeln!(out, "Editor language: {}", lesson.editor_language);
    let _ = writeln!(out, "Objectives: {}", lesson.objectives.join("; "));
    let video_end = lesson.video_length_s();
    let _ = writeln!(out, "Video length: {}", clock(video_end));
    out.push_str("Video outline:\n");
    for entry in &lesson.video_outline {
        let _ = writeln!(out, "  {}-{} {}", clock(entry.start_s), clock(entry.end_s), entry.label);
    }
    out.push_str("Cells:\n");
    for cell in &lesson.cells {
        let kind = match cell.kind {
            CellKind::Markdown => "markdown",
            CellKind::Code => "code",
        };
        let _ = writeln!(out, "  {} ({}, {})", cell.cell_id, kind, if cell.editable { "editable" } else { "read-only" });
    }
    out.push_str("Checkpoints:\n");
    let mut covered_until: Option<f64> = None;
    for cp in &lesson.checkpoints {
        let _ = write!(out, "  {} \"{}\" graded on cells {}", cp.checkpoint_id, cp.title, cp.target_cells.join(", "));
        match cp.transcript_window {
            Some(w) => {
                let labels: Vec<&str> = lesson
                    .video_outline
                    .iter()
                    .filter(|e| e.start_s < w.end_s && e.end_s > w.start_s)
                    .map(|e| e.label.as_str())
                    .collect();
                let _ = write!(out, "; covers video {}-{}", clock(w.start_s), clock(w.end_s));
                if !labels.is_empty() {
                    let _ = write!(out, " ({})", labels.join("; "));
                }
                covered_until = Some(covered_until.map_or(w.end_s, |c: f64| c.max(w.end_s)));
            }
            None => {
                out.push_str("; covers the whole video");
                covered_until = Some(video_end);
            }
        }
        out.push('\n');
    }
    match covered_until {
        Some(end) if end < video_end => {
            let _ = writeln!(
                out,
                "Checkpoint coverage: checkpoints assess video up to {}; video {}-{} is not assessed by any checkpoint.",
                clock(end),
                clock(end),
                clock(video_end)
            );
        }
        Some(_) => out.push_str("Checkpoint coverage: checkpoints assess the whole video.\n"),
        None => out.push_str("Checkpoint coverage: no checkpoints declared.\n"),
    }
    out
}

struct Line {
    timestamp: DateTime<Utc>,
    order: usize,
    text: String,
}

fn stamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%d %H:%M:%S").to_string()
}

fn student_lines(streams: &LessonStreams) -> BTreeMap<&Pseudonym, Vec<Line>> {
    let mut out: BTreeMap<&Pseudonym, Vec<Line>> = BTreeMap::new();
    let mut order = 0;
    let mut push = |who, timestamp, text| {
        order += 1;
        out.entry(who).or_default().push(Line { timestamp, order, text });
    };
    for (who, entries) in &streams.video {
        let last = entries.len().saturating_sub(1);
        for (i, v) in entries.iter().enumerate() {
            let mut text = match v.action {
                VideoAction::Play => format!("video play at {}", clock(v.position_s)),
                VideoAction::Pause => format!("video pause at {}", clock(v.position_s)),
                VideoAction::Seek => format!(
                    "video seek from {} to {}",
                    clock(v.seek_from_s.unwrap_or(v.position_s)),
                    clock(v.seek_to_s.unwrap_or(v.position_s))
                ),
            };
            if i == last {
                text = format!("{text} {LAST_VIDEO_MARK}");
            }
            push(who, v.timestamp, text);
        }
    }
    for (who, entries) in &streams.chat {
        for c in entries {
            let sender = match c.sender {
                ChatSender::Student => "student",
                ChatSender::Ai => "tutor",
            };
            push(who, c.timestamp, format!("chat {sender}: \"{}\"", c.text));
        }
    }
    for (who, entries) in &streams.code {
        for c in entries {
            let text = match c {
                CodeEntry::Execution { cell_id, success: true, .. } => format!("ran cell {cell_id}: succeeded"),
                CodeEntry::Execution { cell_id, error_message, .. } => {
                    format!("ran cell {cell_id}: failed with {}", error_message.as_deref().unwrap_or("an unreported error"))
                }
                CodeEntry::Checkpoint { checkpoint_id, cell_id, passed, reasoning, .. } => format!(
                    "checkpoint {checkpoint_id} (cell {cell_id}) {}: {reasoning}",
                    if *passed { "passed" } else { "failed" }
                ),
            };
            push(who, c.timestamp(), text);
        }
    }
    for lines in out.values_mut() {
        lines.sort_by_key(|l| (l.timestamp, l.order));
    }
    out
}

fn section_header(who: &Pseudonym) -> String {
    format!("\nStudent {who}\n")
}

fn event_line(line: &Line) -> String {
    format!("  [{}] {}\n", stamp(&line.timestamp), line.text)
}

fn dropped_notice(n: usize) -> String {
    format!("\n[{n} older events omitted to fit the context budget]\n")
}

/// Builds the document from one snapshot, dropping the oldest events first
/// until it fits `budget` characters.
pub fn assemble_document(
    lesson_id: &str,
    lesson: Option<&LessonContent>,
    streams: &LessonStreams,
    summary: &SummaryBlock,
    budget: usize,
) -> ContextDocument {
    let summary_text = render_summary(summary);
    let metadata_section = render_metadata(lesson);
    let head = format!("{summary_text}\n{metadata_section}\nSTUDENT ACTIVITY\n");
    let head_len = head.chars().count();

    let per_student = student_lines(streams);
    // Global age order over every line, oldest first.
    let mut by_age: Vec<(&Pseudonym, usize, DateTime<Utc>, usize)> = per_student
        .iter()
        .flat_map(|(who, lines)| lines.iter().enumerate().map(move |(i, l)| (*who, i, l.timestamp, l.order)))
        .collect();
    by_age.sort_by_key(|&(_, _, ts, order)| (ts, order));

    let mut kept_per_student: BTreeMap<&Pseudonym, usize> = per_student.iter().map(|(w, l)| (*w, l.len())).collect();
    let mut size: usize = head_len
        + per_student
            .iter()
            .map(|(who, lines)| section_header(who).chars().count() + lines.iter().map(|l| event_line(l).chars().count()).sum::<usize>())
            .sum::<usize>();
    let total_lines = by_age.len();
    let reserve = dropped_notice(total_lines).chars().count();
    let mut dropped: BTreeMap<&Pseudonym, usize> = BTreeMap::new();
    let mut n_dropped = 0;
    if size > budget {
        for &(who, i, _, _) in &by_age {
            if size + reserve <= budget {
                break;
            }
            size -= event_line(&per_student[who][i]).chars().count();
            let kept = kept_per_student.get_mut(who).expect("known student");
            *kept -= 1;
            if *kept == 0 {
                size -= section_header(who).chars().count();
            }
            *dropped.entry(who).or_default() += 1;
            n_dropped += 1;
        }
    }

    let mut activity = String::new();
    if per_student.is_empty() {
        activity.push_str(NO_ACTIVITY_NOTICE);
        activity.push('\n');
    }
    for (who, lines) in &per_student {
        // Oldest lines of a student are the ones dropped.
        let skip = dropped.get(who).copied().unwrap_or(0);
        if skip == lines.len() {
            continue;
        }
        activity.push_str(&section_header(who));
        for line in &lines[skip..] {
            activity.push_str(&event_line(line));
        }
    }
    if n_dropped > 0 {
        activity.push_str(&dropped_notice(n_dropped));
    }
    let mut assembled_text = format!("{head}{activity}");
    if assembled_text.chars().count() > budget {
        assembled_text = assembled_text.chars().take(budget).collect();
    }
    ContextDocument {
        lesson_id: lesson_id.to_string(),
        summary: summary.clone(),
        summary_text,
        metadata_section,
        activity_section: activity,
        assembled_text,
        dropped_events: n_dropped,
        assembly_timestamp: Utc::now(),
    }
}

fn render_turns(turns: &[ConversationTurn]) -> String {
    if turns.is_empty() {
        return "(this is the first question)".into();
    }
    turns
        .iter()
        .map(|t| format!("Instructor: {}\nAssistant: {}", t.question, t.answer))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub struct FeedbackService {
    gateway: Arc<ModelGateway>,
    spec: AgentSpec,
    queries: LessonQueries,
    lessons: Arc<LessonCatalog>,
    conversations: Arc<dyn ConversationStore>,
    locks: KeyedLocks,
    budget: usize,
}

impl FeedbackService {
    /// Any tool surface on `spec` is removed: the narrating agent can read
    /// only the document it is handed.
    pub fn new(
        gateway: Arc<ModelGateway>,
        mut spec: AgentSpec,
        queries: LessonQueries,
        lessons: Arc<LessonCatalog>,
        conversations: Arc<dyn ConversationStore>,
    ) -> Self {
        if !spec.tools.is_empty() {
            tracing::warn!(count = spec.tools.len(), "feedback agent tools removed");
            spec.tools.clear();
        }
        FeedbackService { gateway, spec, queries, lessons, conversations, locks: KeyedLocks::new(), budget: DEFAULT_CONTEXT_BUDGET }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    /// One store read: streams and summary come from the same snapshot.
    pub fn assemble_context(&self, lesson_id: &str) -> Result<ContextDocument, FeedbackError> {
        let snapshot = self.queries.snapshot(lesson_id)?;
        Ok(assemble_document(lesson_id, self.lessons.get(lesson_id), &snapshot.streams, &snapshot.summary, self.budget))
    }

    pub fn list_lessons_with_activity(&self) -> Result<Vec<SummaryBlock>, FeedbackError> {
        Ok(self.queries.lessons_with_activity()?)
    }

    /// Answers `question`, starting a conversation when `conversation_id`
    /// is `None`. Follow-ups reuse the frozen document and read nothing.
    pub async fn ask(&self, conversation_id: Option<&str>, lesson_id: &str, question: &str) -> Result<Answer, FeedbackError> {
        let question = question.trim();
        if question.is_empty() {
            return Err(FeedbackError::EmptyQuestion);
        }
        let mut conversation = match conversation_id {
            Some(id) => {
                let conversation = self.conversations.load_conversation(id).map_err(|e| match e {
                    StoreError::NotFound(id) => FeedbackError::ConversationNotFound(id),
                    other => FeedbackError::ConversationStorage(other),
                })?;
                if conversation.lesson_id != lesson_id {
                    return Err(FeedbackError::LessonMismatch {
                        conversation: id.to_string(),
                        lesson: conversation.lesson_id,
                    });
                }
                conversation
            }
            None => Conversation {
                conversation_id: format!("conv-{}", uuid::Uuid::new_v4().simple()),
                lesson_id: lesson_id.to_string(),
                context: self.assemble_context(lesson_id)?,
                turns: Vec::new(),
            },
        };
        let _guard = self.locks.lock(&conversation.conversation_id).await;
        if conversation_id.is_some() {
            // Another writer may have appended while this one waited.
            if let Ok(latest) = self.conversations.load_conversation(&conversation.conversation_id) {
                conversation = latest;
            }
        }

        let mut bindings = Bindings::new();
        bindings.insert("context", conversation.context.assembled_text.clone());
        bindings.insert("history", render_turns(&conversation.turns));
        bindings.insert("question", question.to_string());
        let prompt = self.gateway.prompt(&self.spec, &bindings).map_err(FeedbackError::GatewayFailure)?;
        let answer = self.gateway.complete_text(&self.spec, prompt).await.map_err(FeedbackError::GatewayFailure)?;

        conversation.turns.push(ConversationTurn { question: question.to_string(), answer: answer.clone() });
        self.conversations.save_conversation(&conversation).map_err(FeedbackError::ConversationStorage)?;
        Ok(Answer { conversation_id: conversation.conversation_id, answer })
    }
}
