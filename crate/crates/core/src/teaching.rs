//! One student turn: build the context, fan out to the three specialists,
//! merge their reports in the synthesizer, persist, and emit chat events.

use std::sync::Arc;
use std::time::Instant;

use chrono::Utc;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{
    ChatPayload, ChatRole, ChatSender, ChatTurn, CodeReport, ErrorPayload, EventBody, GuidanceReport, RawEvent,
    SessionKey, SessionState, TurnTiming, VideoReport,
};
use crate::events::EventEmitter;
use crate::gateway::prompts::UNAVAILABLE_BLOCK;
use crate::gateway::{AgentName, AgentSet, Bindings, GatewayError, ModelGateway};
use crate::lesson::{CellKind, ErrorCatalogEntry, LessonCatalog, LessonContent, TranscriptSegment};
use crate::session_store::{KeyedLocks, SessionStore, StoreError};

/// Chat entries kept in session state (ten student/tutor exchanges).
pub const CHAT_HISTORY_ENTRIES: usize = 20;

/// What the student sees when the synthesizer cannot answer.
pub const FALLBACK_RESPONSE: &str =
    "The tutor could not put a reply together just now. Please send your message again in a moment.";

#[derive(Debug, thiserror::Error)]
pub enum TeachingError {
    #[error("the student message is empty")]
    EmptyQuery,
    #[error("no session `{0}`")]
    SessionNotFound(String),
    #[error("lesson `{0}` is not loaded")]
    LessonNotFound(String),
    #[error("session `{session}` does not belong to lesson `{lesson}`")]
    SessionLessonMismatch { session: String, lesson: String },
    #[error(transparent)]
    Storage(StoreError),
}

impl From<StoreError> for TeachingError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(key) => TeachingError::SessionNotFound(key),
            other => TeachingError::Storage(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellView {
    pub cell_id: String,
    pub source: String,
    pub last_output: String,
    pub last_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnContext {
    pub lesson_id: String,
    pub student_query: String,
    pub checkpoint_id: String,
    pub checkpoint_title: String,
    /// Every checkpoint is done; the context falls back to the last one.
    pub lesson_completed: bool,
    pub editor_language: String,
    pub transcript_window: Vec<TranscriptSegment>,
    pub cells_with_outputs: Vec<CellView>,
    pub error_catalog: Vec<ErrorCatalogEntry>,
    pub chat_history: Vec<ChatTurn>,
    pub video_instructions: String,
    pub guidance_instructions: String,
    pub code_instructions: String,
    pub synthesizer_instructions: String,
}

/// Builds the per-turn inputs from session state and lesson content only.
pub fn build_turn_context(session: &SessionState, lesson: &LessonContent, query: &str) -> Result<TurnContext, TeachingError> {
    if query.trim().is_empty() {
        return Err(TeachingError::EmptyQuery);
    }
    if session.session_key.lesson_id() != lesson.lesson_id {
        return Err(TeachingError::SessionLessonMismatch {
            session: session.session_key.to_string(),
            lesson: lesson.lesson_id.clone(),
        });
    }
    let active = lesson
        .checkpoints
        .iter()
        .find(|cp| !session.completed_checkpoints.contains(&cp.checkpoint_id));
    let lesson_completed = active.is_none();
    let checkpoint = active.or(lesson.checkpoints.last()).expect("validated lessons declare checkpoints");
    let transcript_window = lesson
        .transcript_window(&checkpoint.checkpoint_id)
        .expect("checkpoint comes from this lesson")
        .into_iter()
        .cloned()
        .collect();
    let cells_with_outputs = lesson
        .cells
        .iter()
        .filter(|c| c.kind == CellKind::Code)
        .map(|c| {
            let source = if c.editable {
                session.cell_contents.get(&c.cell_id).cloned().unwrap_or_else(|| c.initial_source.clone())
            } else {
                c.initial_source.clone()
            };
            let output = session.cell_outputs.get(&c.cell_id);
            CellView {
                cell_id: c.cell_id.clone(),
                source,
                last_output: output.map(|o| o.output.clone()).unwrap_or_default(),
                last_error: output.and_then(|o| o.error.clone()),
            }
        })
        .collect();
    Ok(TurnContext {
        lesson_id: lesson.lesson_id.clone(),
        student_query: query.trim().to_string(),
        checkpoint_id: checkpoint.checkpoint_id.clone(),
        checkpoint_title: checkpoint.title.clone(),
        lesson_completed,
        editor_language: lesson.editor_language.clone(),
        transcript_window,
        cells_with_outputs,
        error_catalog: lesson.error_catalog.clone(),
        chat_history: session.chat_context.clone(),
        video_instructions: lesson.instructions("video").to_string(),
        guidance_instructions: lesson.instructions("guidance").to_string(),
        code_instructions: lesson.instructions("code").to_string(),
        synthesizer_instructions: lesson.instructions("synthesizer").to_string(),
    })
}

fn clock(seconds: f64) -> String {
    let total = seconds.max(0.0).round() as u64;
    format!("{:02}:{:02}", total / 60, total % 60)
}

fn checkpoint_line(ctx: &TurnContext) -> String {
    if ctx.lesson_completed {
        format!("{} (all checkpoints completed)", ctx.checkpoint_title)
    } else {
        ctx.checkpoint_title.clone()
    }
}

fn render_transcript(segments: &[TranscriptSegment]) -> String {
    if segments.is_empty() {
        return "(no transcript for this checkpoint)".into();
    }
    segments
        .iter()
        .map(|s| format!("[{}-{}] {}", clock(s.start_s), clock(s.end_s), s.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_cells(cells: &[CellView]) -> String {
    cells
        .iter()
        .map(|c| {
            let mut out = format!("Cell {}:\n{}\nOutput:\n{}", c.cell_id, c.source, if c.last_output.is_empty() { "(none)" } else { &c.last_output });
            if let Some(err) = &c.last_error {
                out.push_str(&format!("\nError:\n{err}"));
            }
            out
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn render_catalog(entries: &[ErrorCatalogEntry]) -> String {
    if entries.is_empty() {
        return "(none listed)".into();
    }
    entries.iter().map(|e| format!("{}: {}", e.pattern, e.explanation)).collect::<Vec<_>>().join("\n")
}

fn render_history(turns: &[ChatTurn]) -> String {
    if turns.is_empty() {
        return "(no earlier messages)".into();
    }
    turns
        .iter()
        .map(|t| match t.role {
            ChatRole::Student => format!("Student: {}", t.text),
            ChatRole::Tutor => format!("Tutor: {}", t.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_report<T: Serialize>(slot: &Result<T, GatewayError>) -> String {
    match slot {
        Ok(report) => serde_json::to_string_pretty(report).expect("reports serialize"),
        Err(_) => UNAVAILABLE_BLOCK.to_string(),
    }
}

/// The three specialist results for one turn; a failure fills its slot only.
#[derive(Debug)]
pub struct SpecialistReports {
    pub video: Result<VideoReport, GatewayError>,
    pub guidance: Result<GuidanceReport, GatewayError>,
    pub code: Result<CodeReport, GatewayError>,
    pub l_video: u64,
    pub l_guidance: u64,
    pub l_code: u64,
}

impl SpecialistReports {
    pub fn failed(&self) -> Vec<AgentName> {
        let mut out = Vec::new();
        if self.video.is_err() {
            out.push(AgentName::Video);
        }
        if self.guidance.is_err() {
            out.push(AgentName::Guidance);
        }
        if self.code.is_err() {
            out.push(AgentName::Code);
        }
        out
    }

    pub fn parallel_phase_ms(&self) -> u64 {
        self.l_video.max(self.l_guidance).max(self.l_code)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatFinding {
    TooFewSentences,
    TooManySentences,
    HeaderMarkup,
    ListMarkup,
    MissingConcludingAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedResponse {
    pub text: String,
    pub format_findings: Vec<FormatFinding>,
    pub timing: TurnTiming,
    /// Specialists whose reports were replaced by the unavailable block.
    pub unavailable: Vec<AgentName>,
    /// True when the text is the canned fallback.
    pub fallback: bool,
}

/// Verbs that mark a concluding next action.
pub const ACTION_VERBS: &[&str] = &[
    "add", "apply", "call", "change", "check", "compare", "define", "delete", "edit", "fix", "look", "measure",
    "move", "open", "print", "remove", "rename", "replace", "rerun", "re-run", "review", "rewatch", "run", "set",
    "swap", "test", "try", "update", "use", "watch", "write",
];

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, c)) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') {
            let next = chars.get(i + 1).map(|&(_, n)| n);
            if next.is_none_or(char::is_whitespace) {
                let end = pos + c.len_utf8();
                let piece = text[start..end].trim();
                if !piece.is_empty() {
                    out.push(piece);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Soft checks on synthesizer prose; findings never block the reply.
pub fn validate_response_format(text: &str) -> Vec<FormatFinding> {
    validate_response_format_with(text, ACTION_VERBS)
}

pub fn validate_response_format_with(text: &str, action_verbs: &[&str]) -> Vec<FormatFinding> {
    let header = Regex::new(r"(?m)^\s{0,3}#{1,6}\s").expect("static regex");
    let list = Regex::new(r"(?m)^\s*(?:[-*+•]|\d+[.)])\s").expect("static regex");
    let mut findings = Vec::new();
    let parts = sentences(text);
    if parts.is_empty() {
        findings.push(FormatFinding::TooFewSentences);
    } else if parts.len() > 4 {
        findings.push(FormatFinding::TooManySentences);
    }
    let has_header = header.is_match(text);
    let has_list = list.is_match(text);
    if has_header {
        findings.push(FormatFinding::HeaderMarkup);
    }
    if has_list {
        findings.push(FormatFinding::ListMarkup);
    }
    // Markup already explains a malformed ending; only plain prose is checked.
    if !has_header && !has_list {
        if let Some(last) = parts.last() {
            let lower = last.to_lowercase();
            let words: Vec<&str> = lower.split(|c: char| !(c.is_alphanumeric() || c == '-')).collect();
            if !words.iter().any(|w| action_verbs.contains(w)) {
                findings.push(FormatFinding::MissingConcludingAction);
            }
        }
    }
    findings
}

async fn timed<F: std::future::Future>(fut: F) -> (F::Output, u64) {
    let start = Instant::now();
    let out = fut.await;
    (out, start.elapsed().as_millis() as u64)
}

pub struct Orchestrator {
    gateway: Arc<ModelGateway>,
    agents: AgentSet,
    sessions: Arc<dyn SessionStore>,
    lessons: Arc<LessonCatalog>,
    locks: Arc<KeyedLocks>,
    emitter: EventEmitter,
}

impl Orchestrator {
    pub fn new(
        gateway: Arc<ModelGateway>,
        agents: AgentSet,
        sessions: Arc<dyn SessionStore>,
        lessons: Arc<LessonCatalog>,
        locks: Arc<KeyedLocks>,
        emitter: EventEmitter,
    ) -> Self {
        Orchestrator { gateway, agents, sessions, lessons, locks, emitter }
    }

    /// Runs the three specialists concurrently. Each slot is validated on its
    /// own and a failure never cancels its siblings.
    pub async fn run_specialists(&self, ctx: &TurnContext) -> SpecialistReports {
        let checkpoint = checkpoint_line(ctx);
        let mut video = Bindings::new();
        video.insert("lesson_instructions", ctx.video_instructions.clone());
        video.insert("checkpoint", checkpoint.clone());
        video.insert("transcript", render_transcript(&ctx.transcript_window));
        video.insert("query", ctx.student_query.clone());

        let mut guidance = Bindings::new();
        guidance.insert("lesson_instructions", ctx.guidance_instructions.clone());
        guidance.insert("checkpoint", checkpoint.clone());
        guidance.insert("editor_language", ctx.editor_language.clone());
        guidance.insert("query", ctx.student_query.clone());

        let mut code = Bindings::new();
        code.insert("lesson_instructions", ctx.code_instructions.clone());
        code.insert("error_catalog", render_catalog(&ctx.error_catalog));
        code.insert("checkpoint", checkpoint);
        code.insert("editor_language", ctx.editor_language.clone());
        code.insert("cells", render_cells(&ctx.cells_with_outputs));
        code.insert("query", ctx.student_query.clone());

        let gw = &self.gateway;
        let video_call = async {
            let prompt = gw.prompt(&self.agents.video, &video)?;
            gw.complete_structured::<VideoReport>(&self.agents.video, prompt).await
        };
        let guidance_call = async {
            let prompt = gw.prompt(&self.agents.guidance, &guidance)?;
            gw.complete_structured::<GuidanceReport>(&self.agents.guidance, prompt).await
        };
        let code_call = async {
            let prompt = gw.prompt(&self.agents.code, &code)?;
            gw.complete_structured::<CodeReport>(&self.agents.code, prompt).await
        };
        let ((video, l_video), (guidance, l_guidance), (code, l_code)) =
            tokio::join!(timed(video_call), timed(guidance_call), timed(code_call));
        for (agent, failed) in [
            (AgentName::Video, video.as_ref().err()),
            (AgentName::Guidance, guidance.as_ref().err()),
            (AgentName::Code, code.as_ref().err()),
        ] {
            if let Some(e) = failed {
                tracing::warn!(agent = %agent, error = %e, "specialist failed; synthesizing without it");
            }
        }
        SpecialistReports { video, guidance, code, l_video, l_guidance, l_code }
    }

    /// Merges whatever reports exist. Total: returns the fallback text and
    /// the gateway error when the synthesizer itself fails.
    pub async fn synthesize(&self, reports: &SpecialistReports, ctx: &TurnContext) -> (SynthesizedResponse, Option<GatewayError>) {
        let mut bindings = Bindings::new();
        bindings.insert("lesson_instructions", ctx.synthesizer_instructions.clone());
        bindings.insert("checkpoint", checkpoint_line(ctx));
        bindings.insert("chat_history", render_history(&ctx.chat_history));
        bindings.insert("video_report", render_report(&reports.video));
        bindings.insert("guidance_report", render_report(&reports.guidance));
        bindings.insert("code_report", render_report(&reports.code));
        bindings.insert("query", ctx.student_query.clone());

        let start = Instant::now();
        let outcome = match self.gateway.prompt(&self.agents.synthesizer, &bindings) {
            Ok(prompt) => self.gateway.complete_text(&self.agents.synthesizer, prompt).await,
            Err(e) => Err(e),
        };
        let l_synth = start.elapsed().as_millis() as u64;
        let timing = TurnTiming {
            l_video: reports.l_video,
            l_guidance: reports.l_guidance,
            l_code: reports.l_code,
            l_synth,
            wall: 0,
        };
        let unavailable = reports.failed();
        match outcome {
            Ok(text) => {
                let format_findings = validate_response_format(&text);
                if !format_findings.is_empty() {
                    tracing::info!(findings = ?format_findings, "synthesizer reply breaks format guidance");
                }
                (SynthesizedResponse { text, format_findings, timing, unavailable, fallback: false }, None)
            }
            Err(e) => {
                tracing::error!(error = %e, "synthesis failed; returning fallback");
                let response = SynthesizedResponse {
                    text: FALLBACK_RESPONSE.to_string(),
                    format_findings: Vec::new(),
                    timing,
                    unavailable,
                    fallback: true,
                };
                (response, Some(e))
            }
        }
    }

    /// Load, build, fan out, synthesize, persist, emit.
    pub async fn handle_chat_turn(&self, key: &SessionKey, query: &str) -> Result<SynthesizedResponse, TeachingError> {
        if query.trim().is_empty() {
            return Err(TeachingError::EmptyQuery);
        }
        let _guard = self.locks.lock(key.as_str()).await;
        let started = Instant::now();
        let mut session = self.sessions.load(key)?;
        let lesson = self
            .lessons
            .get(key.lesson_id())
            .ok_or_else(|| TeachingError::LessonNotFound(key.lesson_id().to_string()))?;
        let ctx = build_turn_context(&session, lesson, query)?;
        let reports = self.run_specialists(&ctx).await;
        let (mut response, synth_error) = self.synthesize(&reports, &ctx).await;

        session.chat_context.push(ChatTurn { role: ChatRole::Student, text: ctx.student_query.clone() });
        session.chat_context.push(ChatTurn { role: ChatRole::Tutor, text: response.text.clone() });
        let excess = session.chat_context.len().saturating_sub(CHAT_HISTORY_ENTRIES);
        session.chat_context.drain(..excess);
        if let Err(e) = self.sessions.save(&session) {
            tracing::error!(error = %e, "could not persist chat turn");
        }

        let now = Utc::now();
        let event = |body| RawEvent {
            user_id: key.user_id().to_string(),
            lesson_id: key.lesson_id().to_string(),
            session_id: key.to_string(),
            timestamp: now,
            body,
        };
        let mut events = vec![
            event(EventBody::ChatMessage(ChatPayload { sender: ChatSender::Student, text: ctx.student_query.clone() })),
            event(EventBody::ChatMessage(ChatPayload { sender: ChatSender::Ai, text: response.text.clone() })),
        ];
        if let Some(e) = synth_error {
            events.push(event(EventBody::Error(ErrorPayload { source: "synthesizer".into(), message: e.to_string() })));
        }
        self.emitter.emit(events);
        response.timing.wall = started.elapsed().as_millis() as u64;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CellOutput;
    use crate::lesson::tests::sample_lesson;
    use crate::session_store::initial_state;

    #[test]
    fn well_formed_reply_has_no_findings() {
        assert!(validate_response_format("Change c2 to use numpy.dot. Run the cell.").is_empty());
    }

    #[test]
    fn markup_reply_is_flagged() {
        assert_eq!(
            validate_response_format("## Diagnosis\n- item"),
            vec![FormatFinding::HeaderMarkup, FormatFinding::ListMarkup]
        );
    }

    #[test]
    fn five_sentences_are_too_many() {
        let text = "One. Two. Three. Four. Run the cell.";
        assert_eq!(validate_response_format(text), vec![FormatFinding::TooManySentences]);
    }

    #[test]
    fn six_sentences_with_bullets() {
        let text = "A.\n- B.\n- C. D. E. Run it.";
        assert_eq!(
            validate_response_format(text),
            vec![FormatFinding::TooManySentences, FormatFinding::ListMarkup]
        );
    }

    #[test]
    fn missing_action_and_empty_text() {
        assert_eq!(validate_response_format("Nice work so far."), vec![FormatFinding::MissingConcludingAction]);
        assert_eq!(validate_response_format("   "), vec![FormatFinding::TooFewSentences]);
    }

    #[test]
    fn decimal_points_do_not_split_sentences() {
        assert_eq!(sentences("Set theta to 0.5 and call numpy.dot. Run it."), vec!["Set theta to 0.5 and call numpy.dot.", "Run it."]);
    }

    #[test]
    fn context_uses_first_open_checkpoint_and_session_cells() {
        let lesson = sample_lesson();
        let mut session = initial_state(SessionKey::new("u1", &lesson.lesson_id).unwrap(), &lesson);
        session.cell_contents.insert("c2".into(), "qc.h(0)".into());
        session.cell_outputs.insert("c2".into(), CellOutput { output: "".into(), error: Some("NameError: qc".into()) });
        let ctx = build_turn_context(&session, &lesson, " why? ").unwrap();
        assert_eq!(ctx.checkpoint_title, "Superposition");
        assert_eq!(ctx.student_query, "why?");
        assert!(!ctx.lesson_completed);
        assert_eq!(ctx.cells_with_outputs.len(), 1);
        assert_eq!(ctx.cells_with_outputs[0].last_error.as_deref(), Some("NameError: qc"));
        assert_eq!(ctx.transcript_window.len(), 2);
    }

    #[test]
    fn completed_lesson_falls_back_to_last_checkpoint() {
        let lesson = sample_lesson();
        let mut session = initial_state(SessionKey::new("u1", &lesson.lesson_id).unwrap(), &lesson);
        session.completed_checkpoints.insert("cp1".into());
        let ctx = build_turn_context(&session, &lesson, "what next?").unwrap();
        assert!(ctx.lesson_completed);
        assert_eq!(ctx.checkpoint_id, "cp1");
    }

    #[test]
    fn empty_query_and_foreign_session_are_refused() {
        let lesson = sample_lesson();
        let session = initial_state(SessionKey::new("u1", &lesson.lesson_id).unwrap(), &lesson);
        assert!(matches!(build_turn_context(&session, &lesson, " \n"), Err(TeachingError::EmptyQuery)));
        let other = SessionState::empty(SessionKey::new("u1", "other").unwrap());
        assert!(matches!(
            build_turn_context(&other, &lesson, "q"),
            Err(TeachingError::SessionLessonMismatch { .. })
        ));
    }
}
