//! Checkpoint grading: a scaffold-aware emptiness check that never calls the
//! model, then one structured grading call.

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::domain::{CheckpointPayload, ErrorPayload, EventBody, GradeResult, RawEvent, SessionKey, SessionState};
use crate::events::EventEmitter;
use crate::gateway::{AgentSpec, Bindings, GatewayError, ModelGateway};
use crate::lesson::{LessonCatalog, LessonContent};
use crate::session_store::{KeyedLocks, SessionStore, StoreError};

/// Reasoning attached to every empty-submission result.
pub const EMPTY_SUBMISSION_REASONING: &str =
    "No code was found in the target cells beyond the starter template, so there is nothing to grade yet. \
     Write your solution in those cells and check again.";

#[derive(Debug, thiserror::Error)]
pub enum GradeError {
    #[error("no session `{0}`")]
    SessionNotFound(String),
    #[error("lesson `{0}` is not loaded")]
    LessonNotFound(String),
    #[error("lesson has no checkpoint `{0}`")]
    UnknownCheckpoint(String),
    #[error("grading is unavailable right now, please retry: {0}")]
    GatewayFailure(GatewayError),
    #[error(transparent)]
    Storage(StoreError),
}

impl From<StoreError> for GradeError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(key) => GradeError::SessionNotFound(key),
            other => GradeError::Storage(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionCell {
    pub cell_id: String,
    pub source: String,
    pub last_output: String,
    pub last_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub session_key: SessionKey,
    pub checkpoint_id: String,
    /// Exactly the checkpoint's target cells, in lesson order.
    pub cells: Vec<SubmissionCell>,
}

impl Submission {
    pub fn from_session(session: &SessionState, lesson: &LessonContent, checkpoint_id: &str) -> Result<Self, GradeError> {
        let cp = lesson.checkpoint(checkpoint_id).ok_or_else(|| GradeError::UnknownCheckpoint(checkpoint_id.to_string()))?;
        let cells = lesson
            .cells
            .iter()
            .filter(|c| cp.target_cells.contains(&c.cell_id))
            .map(|c| {
                let output = session.cell_outputs.get(&c.cell_id);
                SubmissionCell {
                    cell_id: c.cell_id.clone(),
                    source: session.cell_contents.get(&c.cell_id).cloned().unwrap_or_else(|| c.initial_source.clone()),
                    last_output: output.map(|o| o.output.clone()).unwrap_or_default(),
                    last_error: output.and_then(|o| o.error.clone()),
                }
            })
            .collect();
        Ok(Submission { session_key: session.session_key.clone(), checkpoint_id: checkpoint_id.to_string(), cells })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PreGrade {
    Proceed,
    ShortCircuit(GradeResult),
}

/// True when `source` holds nothing beyond lines of the cell's scaffold.
pub fn is_effectively_empty(source: &str, scaffold: &str) -> bool {
    let scaffold_lines: BTreeSet<&str> = scaffold.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    source
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .all(|l| scaffold_lines.contains(l))
}

pub fn pre_grade_check(sub: &Submission, lesson: &LessonContent) -> PreGrade {
    let all_empty = sub.cells.iter().all(|c| {
        let scaffold = lesson.cell(&c.cell_id).map(|cell| cell.initial_source.as_str()).unwrap_or("");
        is_effectively_empty(&c.source, scaffold)
    });
    if all_empty {
        PreGrade::ShortCircuit(GradeResult { passed: false, reasoning: EMPTY_SUBMISSION_REASONING.to_string() })
    } else {
        PreGrade::Proceed
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeOutcome {
    pub result: GradeResult,
    pub short_circuit: bool,
}

pub struct Autograder {
    gateway: Arc<ModelGateway>,
    spec: AgentSpec,
    sessions: Arc<dyn SessionStore>,
    lessons: Arc<LessonCatalog>,
    locks: Arc<KeyedLocks>,
    emitter: EventEmitter,
}

fn render_cells(cells: &[crate::autograder::SubmissionCell]) -> String {
    cells
        .iter()
        .map(|c| {
            let mut out = format!(
                "Cell {}:\n{}\nOutput:\n{}",
                c.cell_id,
                c.source,
                if c.last_output.is_empty() { "(none)" } else { &c.last_output }
            );
            if let Some(err) = &c.last_error {
                out.push_str(&format!("\nError:\n{err}"));
            }
            out
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

impl Autograder {
    pub fn new(
        gateway: Arc<ModelGateway>,
        spec: AgentSpec,
        sessions: Arc<dyn SessionStore>,
        lessons: Arc<LessonCatalog>,
        locks: Arc<KeyedLocks>,
        emitter: EventEmitter,
    ) -> Self {
        Autograder { gateway, spec, sessions, lessons, locks, emitter }
    }

    /// One grading model call for a non-empty submission.
    pub async fn grade(&self, sub: &Submission, lesson: &LessonContent) -> Result<GradeResult, GatewayError> {
        let cp = lesson.checkpoint(&sub.checkpoint_id).expect("submission built from this lesson");
        let mut bindings = Bindings::new();
        bindings.insert("lesson_instructions", lesson.instructions("autograder").to_string());
        bindings.insert("grading_instructions", cp.grading_instructions.render());
        bindings.insert("checkpoint", cp.title.clone());
        bindings.insert("editor_language", lesson.editor_language.clone());
        bindings.insert("cells", render_cells(&sub.cells));
        let prompt = self.gateway.prompt(&self.spec, &bindings)?;
        self.gateway.complete_structured::<GradeResult>(&self.spec, prompt).await
    }

    /// Grades the checkpoint against the session's current cells. A pass
    /// marks the checkpoint complete; a gateway failure changes nothing.
    pub async fn submit(&self, key: &SessionKey, checkpoint_id: &str) -> Result<GradeOutcome, GradeError> {
        let _guard = self.locks.lock(key.as_str()).await;
        let mut session = self.sessions.load(key)?;
        let lesson = self
            .lessons
            .get(key.lesson_id())
            .ok_or_else(|| GradeError::LessonNotFound(key.lesson_id().to_string()))?;
        let sub = Submission::from_session(&session, lesson, checkpoint_id)?;
        let event = |body| RawEvent {
            user_id: key.user_id().to_string(),
            lesson_id: key.lesson_id().to_string(),
            session_id: key.to_string(),
            timestamp: Utc::now(),
            body,
        };
        let first_cell = sub.cells.first().map(|c| c.cell_id.clone()).unwrap_or_default();

        let (result, short_circuit) = match pre_grade_check(&sub, lesson) {
            PreGrade::ShortCircuit(result) => (result, true),
            PreGrade::Proceed => match self.grade(&sub, lesson).await {
                Ok(result) => (result, false),
                Err(e) => {
                    tracing::error!(checkpoint = checkpoint_id, error = %e, "grading call failed");
                    self.emitter.emit(vec![event(EventBody::Error(ErrorPayload {
                        source: "autograder".into(),
                        message: e.to_string(),
                    }))]);
                    return Err(GradeError::GatewayFailure(e));
                }
            },
        };
        if result.passed && session.completed_checkpoints.insert(checkpoint_id.to_string()) {
            self.sessions.save(&session)?;
        }
        self.emitter.emit(vec![event(EventBody::CheckpointEvaluation(CheckpointPayload {
            checkpoint_id: checkpoint_id.to_string(),
            cell_id: first_cell,
            passed: result.passed,
            reasoning: result.reasoning.clone(),
        }))]);
        Ok(GradeOutcome { result, short_circuit })
    }
}
