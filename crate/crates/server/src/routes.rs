//! Per-service routers and handlers.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wheelhouse_core::autograder::Autograder;
use wheelhouse_core::domain::{CellOutput, CodeEditorPayload, CodeExecutionPayload, EventBody, RawEvent, SessionKey};
use wheelhouse_core::events::{EventEmitter, EventStore, Ingestor};
use wheelhouse_core::feedback::FeedbackService;
use wheelhouse_core::gateway::BackendKind;
use wheelhouse_core::lesson::{Cell, CellKind, LessonCatalog, LessonContent};
use wheelhouse_core::session_store::{KeyedLocks, SessionStore};
use wheelhouse_core::teaching::Orchestrator;

use crate::error::{body, ApiError};
use crate::executor::{ExecutionResult, ExecutorClient};

pub enum Probe {
    Sessions(Arc<dyn SessionStore>),
    Events(Arc<dyn EventStore>),
}

pub struct Health {
    pub service: &'static str,
    pub backend: Option<BackendKind>,
    pub probes: Vec<Probe>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthReport {
    pub status: String,
    pub service: String,
    pub backend: Option<BackendKind>,
    pub store_reachable: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub problems: Vec<String>,
}

async fn health(State(h): State<Arc<Health>>) -> Response {
    let problems: Vec<String> = h
        .probes
        .iter()
        .filter_map(|p| match p {
            Probe::Sessions(s) => s.ping().err().map(|e| e.to_string()),
            Probe::Events(s) => s.ping().err().map(|e| e.to_string()),
        })
        .collect();
    let ok = problems.is_empty();
    let report = HealthReport {
        status: if ok { "ok" } else { "degraded" }.into(),
        service: h.service.into(),
        backend: h.backend,
        store_reachable: ok,
        problems,
    };
    let status = if ok { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (status, Json(report)).into_response()
}

fn with_health(router: Router, h: Health) -> Router {
    router.merge(Router::new().route("/health", get(health)).with_state(Arc::new(h)))
}

fn parse_key(raw: &str) -> Result<SessionKey, ApiError> {
    SessionKey::parse(raw).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn raw_event(key: &SessionKey, body: EventBody) -> RawEvent {
    RawEvent {
        user_id: key.user_id().to_string(),
        lesson_id: key.lesson_id().to_string(),
        session_id: key.to_string(),
        timestamp: Utc::now(),
        body,
    }
}

// ---- teaching ----

#[derive(Clone)]
pub struct TeachingState {
    pub orchestrator: Arc<Orchestrator>,
    pub sessions: Arc<dyn SessionStore>,
    pub lessons: Arc<LessonCatalog>,
    pub locks: Arc<KeyedLocks>,
    pub emitter: EventEmitter,
    pub executor: Option<ExecutorClient>,
}

impl TeachingState {
    fn lesson(&self, key: &SessionKey) -> Result<&LessonContent, ApiError> {
        self.lessons
            .get(key.lesson_id())
            .ok_or_else(|| ApiError::not_found(format!("lesson `{}` is not loaded", key.lesson_id())))
    }
}

fn code_cell<'a>(lesson: &'a LessonContent, cell_id: &str) -> Result<&'a Cell, ApiError> {
    let cell = lesson.cell(cell_id).ok_or_else(|| ApiError::not_found(format!("lesson has no cell `{cell_id}`")))?;
    if cell.kind != CellKind::Code {
        return Err(ApiError::bad_request(format!("cell `{cell_id}` is not a code cell")));
    }
    Ok(cell)
}

pub fn teaching(state: TeachingState, h: Health) -> Router {
    let router = Router::new()
        .route("/run", post(run))
        .route("/sessions", post(create_session))
        .route("/sessions/{key}", get(get_session))
        .route("/sessions/{key}/cells/{cell_id}", put(put_cell))
        .route("/sessions/{key}/cells/{cell_id}/output", post(record_output))
        .route("/sessions/{key}/cells/{cell_id}/execute", post(execute_cell))
        .with_state(state);
    with_health(router, h)
}

#[derive(Deserialize)]
struct RunRequest {
    session_id: String,
    message: String,
}

async fn run(State(s): State<TeachingState>, payload: Result<Json<RunRequest>, JsonRejection>) -> Result<Json<Value>, ApiError> {
    let req = body(payload)?;
    let key = parse_key(&req.session_id)?;
    let r = s.orchestrator.handle_chat_turn(&key, &req.message).await?;
    Ok(Json(json!({
        "response": r.text,
        "timing": r.timing,
        "unavailable": r.unavailable,
        "format_findings": r.format_findings,
        "fallback": r.fallback,
    })))
}

#[derive(Deserialize)]
struct CreateSession {
    user_id: String,
    lesson_id: String,
}

async fn create_session(
    State(s): State<TeachingState>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = body(payload)?;
    let lesson = s
        .lessons
        .get(&req.lesson_id)
        .ok_or_else(|| ApiError::not_found(format!("lesson `{}` is not loaded", req.lesson_id)))?;
    let (state, created) = s.sessions.create(&req.user_id, lesson)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(state)).into_response())
}

async fn get_session(State(s): State<TeachingState>, Path(key): Path<String>) -> Result<Response, ApiError> {
    let key = parse_key(&key)?;
    Ok(Json(s.sessions.load(&key)?).into_response())
}

#[derive(Deserialize)]
struct CellSource {
    source: String,
}

async fn put_cell(
    State(s): State<TeachingState>,
    Path((key, cell_id)): Path<(String, String)>,
    payload: Result<Json<CellSource>, JsonRejection>,
) -> Result<StatusCode, ApiError> {
    let req = body(payload)?;
    let key = parse_key(&key)?;
    let cell = code_cell(s.lesson(&key)?, &cell_id)?;
    if !cell.editable {
        return Err(ApiError::bad_request(format!("cell `{cell_id}` is read-only")));
    }
    let _guard = s.locks.lock(key.as_str()).await;
    let mut state = s.sessions.load(&key)?;
    state.cell_contents.insert(cell_id.clone(), req.source);
    s.sessions.save(&state)?;
    s.emitter.emit(vec![raw_event(&key, EventBody::CodeEditor(CodeEditorPayload { cell_id }))]);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct OutputReport {
    #[serde(default)]
    output: String,
    #[serde(default)]
    error: Option<String>,
}

async fn record(s: &TeachingState, key: &SessionKey, cell_id: &str, output: CellOutput) -> Result<(), ApiError> {
    let mut state = s.sessions.load(key)?;
    let error_message = output.error.clone();
    state.cell_outputs.insert(cell_id.to_string(), output);
    s.sessions.save(&state)?;
    s.emitter.emit(vec![raw_event(
        key,
        EventBody::CodeExecution(CodeExecutionPayload {
            cell_id: cell_id.to_string(),
            success: error_message.is_none(),
            error_message,
        }),
    )]);
    Ok(())
}

/// Records a run result obtained outside the server.
async fn record_output(
    State(s): State<TeachingState>,
    Path((key, cell_id)): Path<(String, String)>,
    payload: Result<Json<OutputReport>, JsonRejection>,
) -> Result<StatusCode, ApiError> {
    let req = body(payload)?;
    let key = parse_key(&key)?;
    code_cell(s.lesson(&key)?, &cell_id)?;
    let _guard = s.locks.lock(key.as_str()).await;
    record(&s, &key, &cell_id, CellOutput { output: req.output, error: req.error }).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn execute_cell(
    State(s): State<TeachingState>,
    Path((key, cell_id)): Path<(String, String)>,
) -> Result<Json<ExecutionResult>, ApiError> {
    let key = parse_key(&key)?;
    let cell = code_cell(s.lesson(&key)?, &cell_id)?;
    let executor = s
        .executor
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no execution service configured"))?;
    let _guard = s.locks.lock(key.as_str()).await;
    let state = s.sessions.load(&key)?;
    let source = state.cell_contents.get(&cell_id).cloned().unwrap_or_else(|| cell.initial_source.clone());
    let result = executor.execute(key.as_str(), &cell_id, &source).await?;
    record(&s, &key, &cell_id, CellOutput { output: result.output_text(), error: result.error_text() }).await?;
    Ok(Json(result))
}

// ---- autograde ----

#[derive(Clone)]
pub struct AutogradeState {
    pub autograder: Arc<Autograder>,
}

pub fn autograde(state: AutogradeState, h: Health) -> Router {
    with_health(Router::new().route("/grade", post(grade)).with_state(state), h)
}

#[derive(Deserialize)]
struct GradeRequest {
    session_id: String,
    checkpoint_id: String,
}

async fn grade(State(s): State<AutogradeState>, payload: Result<Json<GradeRequest>, JsonRejection>) -> Result<Json<Value>, ApiError> {
    let req = body(payload)?;
    let key = parse_key(&req.session_id)?;
    let outcome = s.autograder.submit(&key, &req.checkpoint_id).await?;
    Ok(Json(json!({
        "passed": outcome.result.passed,
        "reasoning": outcome.result.reasoning,
        "short_circuit": outcome.short_circuit,
    })))
}

// ---- events ----

#[derive(Clone)]
pub struct EventsState {
    pub ingestor: Arc<Ingestor>,
}

pub fn events(state: EventsState, h: Health) -> Router {
    with_health(Router::new().route("/events", post(ingest)).with_state(state), h)
}

async fn ingest(State(s): State<EventsState>, payload: Result<Json<Value>, JsonRejection>) -> Result<Response, ApiError> {
    let raw = body(payload)?;
    let stored = s.ingestor.ingest(&raw)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "event_id": stored.event_id }))).into_response())
}

// ---- feedback ----

#[derive(Clone)]
pub struct FeedbackState {
    pub feedback: Arc<FeedbackService>,
}

pub fn feedback(state: FeedbackState, h: Health) -> Router {
    let router = Router::new()
        .route("/feedback/lessons", get(list_lessons))
        .route("/feedback/ask", post(ask))
        .with_state(state);
    with_health(router, h)
}

async fn list_lessons(State(s): State<FeedbackState>) -> Result<Json<Value>, ApiError> {
    Ok(Json(json!({ "lessons": s.feedback.list_lessons_with_activity()? })))
}

#[derive(Deserialize)]
struct AskRequest {
    lesson_id: String,
    #[serde(default)]
    conversation_id: Option<String>,
    question: String,
}

async fn ask(State(s): State<FeedbackState>, payload: Result<Json<AskRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let req = body(payload)?;
    let answer = s.feedback.ask(req.conversation_id.as_deref(), &req.lesson_id, &req.question).await?;
    Ok(Json(answer).into_response())
}
