//! Drives a scenario through the live HTTP endpoints, one task per student.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::Utc;
use reqwest::{Client, Method, StatusCode};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::task::JoinSet;
use wheelhouse_core::domain::{
    EventBody, EventCategory, ErrorPayload, OtherPayload, RawEvent, SessionAction, SessionPayload, TurnTiming, VideoPayload,
};

use crate::report::{Divergence, DivergenceKind, GradeRecord, RunReport, TurnRecord};
use crate::scenario::{Action, ExpectedCounts, Scenario, StudentScript};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("cannot read endpoints file {path}: {message}")]
    EndpointsFile { path: String, message: String },
    #[error("environment variable `{0}` holding the API token is not set")]
    MissingToken(String),
    #[error("{service} endpoint {url} is unreachable: {message}")]
    EndpointUnreachable { service: &'static str, url: String, message: String },
    #[error("the teaching service runs the `{0}` model backend; pass --allow-live to replay against it")]
    LiveBackend(String),
    #[error("replay diverged from the scenario in {} ways", .0.divergences.len())]
    DivergenceFailure(Box<RunReport>),
}

/// Base URLs of the four services plus the bearer token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Endpoints {
    pub teaching: String,
    pub autograde: String,
    pub events: String,
    pub feedback: String,
    pub token: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EndpointsFile {
    teaching: String,
    autograde: String,
    events: String,
    feedback: String,
    /// Name of the environment variable holding the token.
    token_env: String,
}

impl Endpoints {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReplayError> {
        let path = path.as_ref();
        let err = |message: String| ReplayError::EndpointsFile { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: EndpointsFile = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        let token = std::env::var(&file.token_env)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ReplayError::MissingToken(file.token_env.clone()))?;
        Ok(Endpoints { teaching: file.teaching, autograde: file.autograde, events: file.events, feedback: file.feedback, token })
    }
}

#[derive(Clone, Debug)]
pub struct ReplayOptions {
    /// Fail with [`ReplayError::DivergenceFailure`] on any divergence.
    pub strict: bool,
    pub allow_live: bool,
    /// Compare store counts against the scenario's expectations.
    pub check_counts: bool,
    /// How long to wait for asynchronously emitted events to land.
    pub settle_timeout: Duration,
    pub request_timeout: Duration,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            strict: false,
            allow_live: false,
            check_counts: true,
            settle_timeout: Duration::from_secs(30),
            request_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Clone)]
struct Ctx {
    client: Client,
    endpoints: Arc<Endpoints>,
    lesson_id: String,
}

#[derive(Debug)]
struct RequestFailure {
    service: &'static str,
    status: Option<u16>,
    message: String,
}

#[derive(Default)]
struct StudentOutcome {
    turns: Vec<TurnRecord>,
    grades: Vec<GradeRecord>,
    failures: Vec<RequestFailure>,
}

impl Ctx {
    async fn send(&self, service: &'static str, method: Method, url: String, body: Value) -> Result<(StatusCode, Value), RequestFailure> {
        let response = self
            .client
            .request(method, url)
            .bearer_auth(&self.endpoints.token)
            .json(&body)
            .send()
            .await
            .map_err(|e| RequestFailure { service, status: None, message: failure_kind(&e) })?;
        let status = response.status();
        let text = response.text().await.unwrap_or_default();
        let value = serde_json::from_str(&text).unwrap_or(Value::Null);
        if status.is_success() {
            Ok((status, value))
        } else {
            let message = value["error"].as_str().unwrap_or("request failed").to_string();
            Err(RequestFailure { service, status: Some(status.as_u16()), message })
        }
    }

    async fn post_event(&self, user_id: &str, body: EventBody) -> Result<(), RequestFailure> {
        let event = RawEvent {
            user_id: user_id.to_string(),
            lesson_id: self.lesson_id.clone(),
            session_id: session_key(user_id, &self.lesson_id),
            timestamp: Utc::now(),
            body,
        };
        let body = serde_json::to_value(&event).expect("raw events serialize");
        self.send("events", Method::POST, format!("{}/events", self.endpoints.events), body).await.map(|_| ())
    }
}

fn failure_kind(e: &reqwest::Error) -> String {
    if e.is_timeout() {
        "timed out".into()
    } else if e.is_connect() {
        "connection refused".into()
    } else {
        "request error".into()
    }
}

pub fn session_key(user_id: &str, lesson_id: &str) -> String {
    format!("session_{user_id}_{lesson_id}")
}

async fn run_student(ctx: Ctx, index: usize, script: StudentScript) -> StudentOutcome {
    let mut out = StudentOutcome::default();
    let user = script.user_id.as_str();
    let key = session_key(user, &ctx.lesson_id);
    let teaching = ctx.endpoints.teaching.clone();
    for (step, timed) in script.actions.iter().enumerate() {
        let result = match &timed.action {
            Action::StartSession => {
                let created = ctx
                    .send("teaching", Method::POST, format!("{teaching}/sessions"), json!({"user_id": user, "lesson_id": ctx.lesson_id}))
                    .await;
                match created {
                    Ok(_) => ctx.post_event(user, EventBody::SessionManagement(SessionPayload { action: SessionAction::Start })).await,
                    Err(e) => Err(e),
                }
            }
            Action::EndSession => ctx.post_event(user, EventBody::SessionManagement(SessionPayload { action: SessionAction::End })).await,
            Action::Video { action, position_s, seek_from_s, seek_to_s } => {
                let payload = VideoPayload { action: *action, position_s: *position_s, seek_from_s: *seek_from_s, seek_to_s: *seek_to_s };
                ctx.post_event(user, EventBody::VideoPlayback(payload)).await
            }
            Action::Edit { cell_id, source } => ctx
                .send("teaching", Method::PUT, format!("{teaching}/sessions/{key}/cells/{cell_id}"), json!({"source": source}))
                .await
                .map(|_| ()),
            Action::Execute { cell_id, output, error } => ctx
                .send(
                    "teaching",
                    Method::POST,
                    format!("{teaching}/sessions/{key}/cells/{cell_id}/output"),
                    json!({"output": output, "error": error}),
                )
                .await
                .map(|_| ()),
            Action::Chat { message } => {
                let started = Instant::now();
                let r = ctx.send("teaching", Method::POST, format!("{teaching}/run"), json!({"session_id": key, "message": message})).await;
                let client_ms = started.elapsed().as_millis() as u64;
                let record = match &r {
                    Ok((status, body)) => TurnRecord {
                        student: index,
                        step,
                        status: status.as_u16(),
                        well_formed: body["response"].as_str().is_some_and(|t| !t.trim().is_empty()) && body["timing"].is_object(),
                        fallback: body["fallback"].as_bool().unwrap_or(false),
                        unavailable: body["unavailable"].as_array().map_or(0, Vec::len),
                        timing: serde_json::from_value::<TurnTiming>(body["timing"].clone()).ok(),
                        client_ms,
                    },
                    Err(e) => TurnRecord {
                        student: index,
                        step,
                        status: e.status.unwrap_or(0),
                        well_formed: false,
                        fallback: false,
                        unavailable: 0,
                        timing: None,
                        client_ms,
                    },
                };
                out.turns.push(record);
                r.map(|_| ())
            }
            Action::Submit { checkpoint_id, expect_passed } => {
                let r = ctx
                    .send(
                        "autograde",
                        Method::POST,
                        format!("{}/grade", ctx.endpoints.autograde),
                        json!({"session_id": key, "checkpoint_id": checkpoint_id}),
                    )
                    .await;
                let (status, passed, short_circuit, reasoning) = match &r {
                    Ok((s, b)) => (
                        s.as_u16(),
                        b["passed"].as_bool(),
                        b["short_circuit"].as_bool().unwrap_or(false),
                        b["reasoning"].as_str().unwrap_or_default().to_string(),
                    ),
                    Err(e) => (e.status.unwrap_or(0), None, false, String::new()),
                };
                out.grades.push(GradeRecord {
                    student: index,
                    step,
                    checkpoint_id: checkpoint_id.clone(),
                    status,
                    passed,
                    short_circuit,
                    reasoning,
                    expected: *expect_passed,
                });
                r.map(|_| ())
            }
            Action::ClientError { message } => {
                ctx.post_event(user, EventBody::Error(ErrorPayload { source: "frontend".into(), message: message.clone() })).await
            }
            Action::Other { kind } => ctx.post_event(user, EventBody::Other(OtherPayload { kind: kind.clone() })).await,
        };
        if let Err(f) = result {
            out.failures.push(f);
        }
    }
    out
}

#[derive(Deserialize)]
struct LessonList {
    lessons: Vec<LessonCounts>,
}

#[derive(Deserialize)]
struct LessonCounts {
    lesson_id: String,
    counts: BTreeMap<EventCategory, u64>,
    total_events: u64,
    code_executions_succeeded: u64,
}

/// Current store counts for `lesson_id` as seen by the feedback service.
pub async fn fetch_counts(client: &Client, endpoints: &Endpoints, lesson_id: &str) -> Result<ExpectedCounts, String> {
    let response = client
        .get(format!("{}/feedback/lessons", endpoints.feedback))
        .bearer_auth(&endpoints.token)
        .send()
        .await
        .map_err(|e| failure_kind(&e))?;
    if !response.status().is_success() {
        return Err(format!("feedback service returned {}", response.status()));
    }
    let list: LessonList = response.json().await.map_err(|e| e.to_string())?;
    let mut counts = ExpectedCounts::zero();
    if let Some(l) = list.lessons.into_iter().find(|l| l.lesson_id == lesson_id) {
        for (c, n) in l.counts {
            counts.counts.insert(c, n);
        }
        counts.total = l.total_events;
        counts.code_executions_succeeded = l.code_executions_succeeded;
    }
    Ok(counts)
}

fn minus(after: &ExpectedCounts, before: &ExpectedCounts) -> ExpectedCounts {
    let mut out = ExpectedCounts::zero();
    for (c, n) in &after.counts {
        out.counts.insert(*c, n.saturating_sub(before.count(*c)));
    }
    out.total = after.total.saturating_sub(before.total);
    out.code_executions_succeeded = after.code_executions_succeeded.saturating_sub(before.code_executions_succeeded);
    out
}

async fn health(client: &Client, service: &'static str, base: &str) -> Result<Value, ReplayError> {
    let unreachable = |message: String| ReplayError::EndpointUnreachable { service, url: base.to_string(), message };
    let response = client.get(format!("{base}/health")).send().await.map_err(|e| unreachable(failure_kind(&e)))?;
    response.json::<Value>().await.map_err(|e| unreachable(e.to_string()))
}

pub async fn replay(scenario: &Scenario, endpoints: &Endpoints, options: &ReplayOptions) -> Result<RunReport, ReplayError> {
    let client = Client::builder().timeout(options.request_timeout).build().expect("http client builds");
    let started = Instant::now();
    let mut divergences = Vec::new();

    let teaching_health = health(&client, "teaching", &endpoints.teaching).await?;
    let backend = teaching_health["backend"].as_str().unwrap_or("unknown").to_string();
    if backend != "scripted" && !options.allow_live {
        return Err(ReplayError::LiveBackend(backend));
    }
    let needs_grading = scenario.students.iter().flat_map(|s| &s.actions).any(|a| matches!(a.action, Action::Submit { .. }));
    if needs_grading {
        health(&client, "autograde", &endpoints.autograde).await?;
    }
    for (service, base) in [("events", &endpoints.events), ("feedback", &endpoints.feedback)] {
        if let Err(e) = health(&client, service, base).await {
            divergences.push(Divergence { kind: DivergenceKind::Unreachable, detail: e.to_string() });
        }
    }

    let baseline = if options.check_counts { fetch_counts(&client, endpoints, &scenario.lesson_id).await.ok() } else { None };

    let ctx = Ctx { client: client.clone(), endpoints: Arc::new(endpoints.clone()), lesson_id: scenario.lesson_id.clone() };
    let mut tasks = JoinSet::new();
    for (i, script) in scenario.students.iter().cloned().enumerate() {
        tasks.spawn(run_student(ctx.clone(), i, script));
    }
    let mut turns = Vec::new();
    let mut grades = Vec::new();
    let mut failures: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut requests_failed = 0;
    while let Some(joined) = tasks.join_next().await {
        let outcome = joined.expect("student task panicked");
        turns.extend(outcome.turns);
        grades.extend(outcome.grades);
        for f in outcome.failures {
            requests_failed += 1;
            let what = match f.status {
                Some(s) => format!("status {s}: {}", f.message),
                None => f.message,
            };
            *failures.entry((f.service.to_string(), what)).or_default() += 1;
        }
    }
    turns.sort_by_key(|t| (t.student, t.step));
    grades.sort_by_key(|g| (g.student, g.step));
    let actions_done = started.elapsed();

    for ((service, what), n) in failures {
        divergences.push(Divergence { kind: DivergenceKind::Request, detail: format!("{n} {service} requests failed ({what})") });
    }
    for g in &grades {
        if let (Some(expected), Some(passed)) = (g.expected, g.passed) {
            if expected != passed {
                divergences.push(Divergence {
                    kind: DivergenceKind::Grade,
                    detail: format!("student {} {}: expected passed={expected}, got {passed}", g.student, g.checkpoint_id),
                });
            }
        }
    }

    let mut achieved = None;
    if let Some(before) = baseline {
        let deadline = Instant::now() + options.settle_timeout;
        let mut last: Option<ExpectedCounts> = None;
        let mut stable_since = Instant::now();
        loop {
            match fetch_counts(&client, endpoints, &scenario.lesson_id).await {
                Ok(now) => {
                    let delta = minus(&now, &before);
                    if delta == scenario.expected {
                        achieved = Some(delta);
                        break;
                    }
                    if last.as_ref() != Some(&delta) {
                        stable_since = Instant::now();
                    }
                    last = Some(delta);
                }
                Err(e) => {
                    divergences.push(Divergence { kind: DivergenceKind::Unreachable, detail: format!("feedback counts: {e}") });
                    break;
                }
            }
            // Give up early once counts stop moving after the deadline's first half.
            if Instant::now() >= deadline || (stable_since.elapsed() > options.settle_timeout / 2 && last.is_some()) {
                achieved = last;
                break;
            }
            tokio::time::sleep(Duration::from_millis(100)).await;
        }
        if let Some(a) = &achieved {
            divergences.extend(compare_counts(&scenario.expected, a));
        }
    }

    let report = RunReport {
        template: scenario.template.clone(),
        seed: scenario.seed,
        lesson_id: scenario.lesson_id.clone(),
        students: scenario.students.len(),
        actions: scenario.action_count(),
        backend,
        expected: scenario.expected.clone(),
        achieved,
        turns,
        grades,
        requests_failed,
        divergences,
        actions_ms: actions_done.as_millis() as u64,
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    if options.strict && !report.divergences.is_empty() {
        return Err(ReplayError::DivergenceFailure(Box::new(report)));
    }
    Ok(report)
}

pub fn compare_counts(expected: &ExpectedCounts, achieved: &ExpectedCounts) -> Vec<Divergence> {
    let mut out = Vec::new();
    for c in EventCategory::ALL {
        let (e, a) = (expected.count(c), achieved.count(c));
        if e != a {
            out.push(Divergence { kind: DivergenceKind::Count, detail: format!("{c}: expected {e}, store has {a}") });
        }
    }
    if expected.total != achieved.total {
        out.push(Divergence {
            kind: DivergenceKind::Count,
            detail: format!("total: expected {}, store has {}", expected.total, achieved.total),
        });
    }
    if expected.code_executions_succeeded != achieved.code_executions_succeeded {
        out.push(Divergence {
            kind: DivergenceKind::Count,
            detail: format!(
                "successful executions: expected {}, store has {}",
                expected.code_executions_succeeded, achieved.code_executions_succeeded
            ),
        });
    }
    out
}
