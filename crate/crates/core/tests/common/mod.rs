#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use wheelhouse_core::autograder::Autograder;
use wheelhouse_core::domain::SessionKey;
use wheelhouse_core::events::{CourseSalt, EventEmitter, EventSink, Ingestor, JsonlEventStore, LessonQueries, LocalSink};
use wheelhouse_core::feedback::FeedbackService;
use wheelhouse_core::gateway::scripted::{ScriptRule, ScriptedBackend};
use wheelhouse_core::gateway::{AgentSet, ModelGateway, RecordingObserver};
use wheelhouse_core::lesson::LessonCatalog;
use wheelhouse_core::session_store::{KeyedLocks, MemoryStore, SessionStore};
use wheelhouse_core::teaching::Orchestrator;

pub const SALT: &str = "integration-salt-0001";

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn catalog() -> Arc<LessonCatalog> {
    Arc::new(LessonCatalog::load_dir(repo_path("lessons")).expect("bundled lessons load"))
}

pub fn fixture_rules() -> Vec<ScriptRule> {
    let text = std::fs::read_to_string(repo_path("fixtures/scripted-rules.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub struct Harness {
    pub backend: Arc<ScriptedBackend>,
    pub observer: Arc<RecordingObserver>,
    pub gateway: Arc<ModelGateway>,
    pub sessions: Arc<MemoryStore>,
    pub events: Arc<JsonlEventStore>,
    pub ingestor: Arc<Ingestor>,
    pub emitter: EventEmitter,
    pub lessons: Arc<LessonCatalog>,
    pub orchestrator: Orchestrator,
    pub autograder: Autograder,
    pub feedback: FeedbackService,
}

impl Harness {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self::build(rules, None, Arc::new(JsonlEventStore::in_memory()))
    }

    /// `sink` replaces the in-process ingestor as the emitter's target.
    pub fn build(rules: Vec<ScriptRule>, sink: Option<Arc<dyn EventSink>>, events: Arc<JsonlEventStore>) -> Self {
        let backend = Arc::new(ScriptedBackend::new(rules).unwrap());
        let observer = Arc::new(RecordingObserver::default());
        let gateway = Arc::new(ModelGateway::new(backend.clone()).with_observer(observer.clone()));
        let sessions = Arc::new(MemoryStore::new());
        let ingestor = Arc::new(Ingestor::new(events.clone(), CourseSalt::new(SALT).unwrap()));
        let sink = sink.unwrap_or_else(|| Arc::new(LocalSink(ingestor.clone())));
        let emitter = EventEmitter::new(sink);
        let lessons = catalog();
        let locks = Arc::new(KeyedLocks::new());
        let agents = AgentSet::default();
        let orchestrator = Orchestrator::new(
            gateway.clone(),
            agents.clone(),
            sessions.clone(),
            lessons.clone(),
            locks.clone(),
            emitter.clone(),
        );
        let autograder = Autograder::new(
            gateway.clone(),
            agents.autograder.clone(),
            sessions.clone(),
            lessons.clone(),
            locks,
            emitter.clone(),
        );
        let feedback = FeedbackService::new(
            gateway.clone(),
            agents.feedback.clone(),
            LessonQueries::new(events.clone()),
            lessons.clone(),
            sessions.clone(),
        );
        Harness { backend, observer, gateway, sessions, events, ingestor, emitter, lessons, orchestrator, autograder, feedback }
    }

    pub fn session(&self, user: &str, lesson: &str) -> SessionKey {
        let lesson = self.lessons.get(lesson).unwrap();
        self.sessions.create(user, lesson).unwrap().0.session_key
    }

    pub fn set_cell(&self, key: &SessionKey, cell: &str, source: &str) {
        let mut state = self.sessions.load(key).unwrap();
        state.cell_contents.insert(cell.into(), source.into());
        self.sessions.save(&state).unwrap();
    }

    pub async fn flush(&self) {
        assert!(self.emitter.flush(Duration::from_secs(5)).await, "emitter did not drain");
    }
}

/// A wire-format event at `minute` minutes past a fixed class start.
pub fn wire(user: &str, lesson: &str, minute: f64, category: &str, payload: serde_json::Value) -> serde_json::Value {
    use chrono::TimeZone;
    let start = chrono::Utc.with_ymd_and_hms(2025, 3, 4, 14, 0, 0).unwrap();
    let ts = start + chrono::Duration::milliseconds((minute * 60_000.0) as i64);
    serde_json::json!({
        "user_id": user,
        "lesson_id": lesson,
        "session_id": format!("session_{user}_{lesson}"),
        "timestamp": wheelhouse_core::domain::timestamp_millis::format(&ts),
        "category": category,
        "payload": payload,
    })
}

pub fn seek(user: &str, lesson: &str, minute: f64, from_min: f64, to_min: f64) -> serde_json::Value {
    wire(
        user,
        lesson,
        minute,
        "video_playback",
        serde_json::json!({"action": "seek", "position_s": to_min * 60.0, "seek_from_s": from_min * 60.0, "seek_to_s": to_min * 60.0}),
    )
}

/// Five students in the second lesson; three stall between minutes 40 and 44.
pub fn ingest_dead_zone(ingestor: &Ingestor) -> Vec<String> {
    let roster: Vec<String> = (1..=5).map(|i| format!("dz-student-{i}")).collect();
    for (i, user) in roster.iter().enumerate() {
        let u = user.as_str();
        let play = |minute: f64, pos: f64| wire(u, "qis-m2", minute, "video_playback", serde_json::json!({"action": "play", "position_s": pos * 60.0}));
        ingestor.ingest(&play(0.0, 0.0)).unwrap();
        if i < 3 {
            ingestor.ingest(&seek(u, "qis-m2", 41.0, 42.5, 40.5)).unwrap();
            ingestor.ingest(&seek(u, "qis-m2", 43.0, 43.2, 41.0)).unwrap();
            ingestor.ingest(&seek(u, "qis-m2", 44.5, 42.9, 42.0)).unwrap();
        } else {
            ingestor.ingest(&play(70.0, 70.0)).unwrap();
        }
    }
    roster
}
