//! Wiring: builds the selected services from configuration plus optional
//! injected parts, and runs each on its own listener.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::http::{header, HeaderValue, Method};
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tower_http::cors::CorsLayer;
use wheelhouse_core::autograder::Autograder;
use wheelhouse_core::events::{
    CourseSalt, EventEmitter, EventSink, EventStore, Ingestor, JsonlEventStore, LessonQueries, LocalSink, SaltError,
    StorageFailure,
};
use wheelhouse_core::feedback::FeedbackService;
use wheelhouse_core::gateway::http::{HttpProvider, HttpProviderError};
use wheelhouse_core::gateway::scripted::{ScriptError, ScriptedBackend};
use wheelhouse_core::gateway::{AgentName, AgentSet, CallObserver, CallPolicy, ModelBackend, ModelGateway};
use wheelhouse_core::lesson::{LessonCatalog, LessonError};
use wheelhouse_core::session_store::{ConversationStore, KeyedLocks, RedbStore, SessionStore, StoreError};
use wheelhouse_core::teaching::Orchestrator;

use crate::config::{ConfigError, GatewayConfig, ModelConfig, Service};
use crate::executor::ExecutorClient;
use crate::routes::{self, AutogradeState, EventsState, FeedbackState, Health, Probe, TeachingState};
use crate::sink::HttpEventSink;

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Salt(#[from] SaltError),
    #[error(transparent)]
    Lessons(#[from] LessonError),
    #[error("model backend: {0}")]
    Script(#[from] ScriptError),
    #[error("model backend: {0}")]
    Provider(#[from] HttpProviderError),
    #[error("session store: {0}")]
    Sessions(#[from] StoreError),
    #[error("event store: {0}")]
    Events(#[from] StorageFailure),
    #[error("http client: {0}")]
    Client(String),
    #[error("cannot bind {service} on {addr}: {source}")]
    Bind { service: Service, addr: SocketAddr, source: std::io::Error },
    #[error("unsupported service layout: {0}")]
    Topology(String),
}

#[derive(Clone)]
struct StoreHandles {
    sessions: Arc<dyn SessionStore>,
    conversations: Arc<dyn ConversationStore>,
}

impl StoreHandles {
    fn of<S: SessionStore + ConversationStore + 'static>(store: Arc<S>) -> Self {
        StoreHandles { sessions: store.clone(), conversations: store }
    }
}

/// Assembles an [`App`]. Anything not injected is built from the config.
pub struct ServerBuilder {
    config: GatewayConfig,
    services: BTreeSet<Service>,
    token: Option<String>,
    salt: Option<CourseSalt>,
    backend: Option<Arc<dyn ModelBackend>>,
    observer: Option<Arc<dyn CallObserver>>,
    stores: Option<StoreHandles>,
    event_store: Option<Arc<dyn EventStore>>,
    event_sink: Option<Arc<dyn EventSink>>,
}

impl ServerBuilder {
    pub fn new(config: GatewayConfig) -> Self {
        ServerBuilder {
            config,
            services: Service::ALL.into_iter().collect(),
            token: None,
            salt: None,
            backend: None,
            observer: None,
            stores: None,
            event_store: None,
            event_sink: None,
        }
    }

    pub fn services(mut self, services: impl IntoIterator<Item = Service>) -> Self {
        self.services = services.into_iter().collect();
        self
    }

    /// Uses `token` instead of reading the configured environment variable.
    pub fn token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn salt(mut self, salt: CourseSalt) -> Self {
        self.salt = Some(salt);
        self
    }

    pub fn backend(mut self, backend: Arc<dyn ModelBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn observer(mut self, observer: Arc<dyn CallObserver>) -> Self {
        self.observer = Some(observer);
        self
    }

    /// One store for both sessions and instructor conversations.
    pub fn store<S: SessionStore + ConversationStore + 'static>(mut self, store: Arc<S>) -> Self {
        self.stores = Some(StoreHandles::of(store));
        self
    }

    pub fn event_store(mut self, store: Arc<dyn EventStore>) -> Self {
        self.event_store = Some(store);
        self
    }

    /// Where teaching and grading events go, replacing the configured target.
    pub fn event_sink(mut self, sink: Arc<dyn EventSink>) -> Self {
        self.event_sink = Some(sink);
        self
    }

    pub fn build(self) -> Result<App, StartupError> {
        let cfg = &self.config;
        let wants = |s: Service| self.services.contains(&s);
        if self.services.is_empty() {
            return Err(StartupError::Topology("no services selected".into()));
        }
        let student_facing = wants(Service::Teaching) || wants(Service::Autograde);
        let uses_model = student_facing || wants(Service::Feedback);

        if wants(Service::Feedback) && !wants(Service::Events) && self.event_store.is_none() {
            return Err(StartupError::Topology(
                "feedback reads the event store directly and must run in the same process as events".into(),
            ));
        }

        let token: Arc<str> = match self.token {
            Some(t) => t.into(),
            None => cfg.api_token()?.into(),
        };

        let lessons = if uses_model { Arc::new(LessonCatalog::load_dir(&cfg.paths.lessons)?) } else { Arc::default() };
        tracing::info!(lessons = lessons.len(), "lessons loaded");

        let gateway = if uses_model {
            let backend = match self.backend {
                Some(b) => b,
                None => match &cfg.model {
                    ModelConfig::Scripted { rules } => Arc::new(ScriptedBackend::from_file(rules)?) as Arc<dyn ModelBackend>,
                    ModelConfig::HttpProvider { .. } => {
                        Arc::new(HttpProvider::new(cfg.model.provider_config().expect("http provider config"))?)
                    }
                },
            };
            let mut policy = CallPolicy::default();
            if let Some(s) = cfg.agents.call_timeout_s {
                policy.call_timeout = Duration::from_secs(s);
            }
            let mut gateway = ModelGateway::new(backend).with_policy(policy);
            if let Some(observer) = self.observer {
                gateway = gateway.with_observer(observer);
            }
            tracing::info!(backend = gateway.backend_kind().as_str(), "model gateway ready");
            Some(Arc::new(gateway))
        } else {
            None
        };
        let agents = agent_set(cfg);

        // Sessions and conversations share one handle when they share a file.
        let (sessions, conversations) = match self.stores {
            Some(h) => (student_facing.then(|| h.clone()), wants(Service::Feedback).then_some(h)),
            None => {
                let sessions = if student_facing { Some(StoreHandles::of(Arc::new(RedbStore::open(&cfg.paths.sessions)?))) } else { None };
                let conversations = if !wants(Service::Feedback) {
                    None
                } else if let (Some(s), true) = (&sessions, cfg.conversations_path() == cfg.paths.sessions) {
                    Some(s.clone())
                } else {
                    Some(StoreHandles::of(Arc::new(RedbStore::open(cfg.conversations_path())?)))
                };
                (sessions, conversations)
            }
        };

        let event_store: Option<Arc<dyn EventStore>> = match self.event_store {
            Some(s) => Some(s),
            None if wants(Service::Events) || wants(Service::Feedback) => Some(Arc::new(JsonlEventStore::open(&cfg.paths.events)?)),
            None => None,
        };

        let ingestor = if wants(Service::Events) {
            let salt = match self.salt {
                Some(s) => s,
                None => CourseSalt::from_env(&cfg.secrets.course_salt_env)?,
            };
            Some(Arc::new(Ingestor::new(event_store.clone().expect("event store opened"), salt)))
        } else {
            None
        };

        let emitter = if student_facing {
            let sink: Arc<dyn EventSink> = match (self.event_sink, &cfg.events.endpoint, &ingestor) {
                (Some(sink), _, _) => sink,
                (None, Some(endpoint), _) => Arc::new(
                    HttpEventSink::new(endpoint.clone(), token.to_string()).map_err(|e| StartupError::Client(e.to_string()))?,
                ),
                (None, None, Some(ingestor)) => Arc::new(LocalSink(ingestor.clone())),
                (None, None, None) => {
                    return Err(StartupError::Topology(
                        "teaching and autograde need events.endpoint when the events service runs elsewhere".into(),
                    ))
                }
            };
            Some(EventEmitter::new(sink))
        } else {
            None
        };

        let backend_kind = gateway.as_ref().map(|g| g.backend_kind());
        let health = |service: Service, probes: Vec<Probe>| Health { service: service.as_str(), backend: backend_kind, probes };
        let locks = Arc::new(KeyedLocks::new());
        let mut routers = BTreeMap::new();

        if wants(Service::Teaching) {
            let s = sessions.clone().expect("sessions opened");
            let executor = match &cfg.executor.endpoint {
                Some(endpoint) => Some(
                    ExecutorClient::new(endpoint.clone(), Duration::from_secs(cfg.executor.timeout_s))
                        .map_err(|e| StartupError::Client(e.to_string()))?,
                ),
                None => None,
            };
            let state = TeachingState {
                orchestrator: Arc::new(Orchestrator::new(
                    gateway.clone().expect("gateway built"),
                    agents.clone(),
                    s.sessions.clone(),
                    lessons.clone(),
                    locks.clone(),
                    emitter.clone().expect("emitter built"),
                )),
                sessions: s.sessions.clone(),
                lessons: lessons.clone(),
                locks: locks.clone(),
                emitter: emitter.clone().expect("emitter built"),
                executor,
            };
            let h = health(Service::Teaching, vec![Probe::Sessions(s.sessions)]);
            routers.insert(Service::Teaching, routes::teaching(state, h));
        }
        if wants(Service::Autograde) {
            let s = sessions.clone().expect("sessions opened");
            let state = AutogradeState {
                autograder: Arc::new(Autograder::new(
                    gateway.clone().expect("gateway built"),
                    agents.autograder.clone(),
                    s.sessions.clone(),
                    lessons.clone(),
                    locks.clone(),
                    emitter.clone().expect("emitter built"),
                )),
            };
            let h = health(Service::Autograde, vec![Probe::Sessions(s.sessions)]);
            routers.insert(Service::Autograde, routes::autograde(state, h));
        }
        if let Some(ingestor) = &ingestor {
            let h = health(Service::Events, vec![Probe::Events(ingestor.store().clone())]);
            routers.insert(Service::Events, routes::events(EventsState { ingestor: ingestor.clone() }, h));
        }
        if wants(Service::Feedback) {
            let store = event_store.clone().expect("event store opened");
            let c = conversations.expect("conversations opened");
            let feedback = FeedbackService::new(
                gateway.clone().expect("gateway built"),
                agents.feedback.clone(),
                LessonQueries::new(store.clone()),
                lessons.clone(),
                c.conversations,
            );
            let h = health(Service::Feedback, vec![Probe::Events(store), Probe::Sessions(c.sessions)]);
            routers.insert(Service::Feedback, routes::feedback(FeedbackState { feedback: Arc::new(feedback) }, h));
        }

        let cors = cors_layer(&cfg.cors_origins)?;
        let routers = routers
            .into_iter()
            .map(|(service, router)| {
                let router = router
                    .layer(axum::middleware::from_fn_with_state(token.clone(), crate::middleware::require_token))
                    .layer(axum::middleware::from_fn_with_state(service.as_str(), crate::middleware::log_requests));
                (service, match &cors {
                    Some(c) => router.layer(c.clone()),
                    None => router,
                })
            })
            .collect();

        Ok(App { listen: self.config.listen.clone(), routers, emitter, gateway })
    }
}

fn agent_set(cfg: &GatewayConfig) -> AgentSet {
    let mut agents = AgentSet::default();
    for (name, t) in &cfg.agents.temperature {
        let Some(agent) = AgentName::ALL.into_iter().find(|a| a.as_str() == name) else { continue };
        let spec = match agent {
            AgentName::Video => &mut agents.video,
            AgentName::Guidance => &mut agents.guidance,
            AgentName::Code => &mut agents.code,
            AgentName::Synthesizer => &mut agents.synthesizer,
            AgentName::Autograder => &mut agents.autograder,
            AgentName::Feedback => &mut agents.feedback,
        };
        *spec = spec.clone().with_temperature(*t);
    }
    agents
}

fn cors_layer(origins: &[String]) -> Result<Option<CorsLayer>, StartupError> {
    if origins.is_empty() {
        return Ok(None);
    }
    let origins = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| ConfigError::Invalid(format!("cors origin `{o}` is not a header value"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(
        CorsLayer::new()
            .allow_origin(origins)
            .allow_methods([Method::GET, Method::POST, Method::PUT])
            .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE]),
    ))
}

/// Built services, ready to bind.
pub struct App {
    listen: crate::config::Listen,
    routers: BTreeMap<Service, Router>,
    emitter: Option<EventEmitter>,
    gateway: Option<Arc<ModelGateway>>,
}

impl App {
    pub fn router(&self, service: Service) -> Option<Router> {
        self.routers.get(&service).cloned()
    }

    pub fn services(&self) -> impl Iterator<Item = Service> + '_ {
        self.routers.keys().copied()
    }

    pub fn emitter(&self) -> Option<&EventEmitter> {
        self.emitter.as_ref()
    }

    pub fn gateway(&self) -> Option<&Arc<ModelGateway>> {
        self.gateway.as_ref()
    }

    /// Binds every service to its configured address and starts serving.
    pub async fn serve(self) -> Result<RunningServer, StartupError> {
        let (stop, stopped) = watch::channel(false);
        let mut addrs = BTreeMap::new();
        let mut tasks = Vec::new();
        for (service, router) in self.routers {
            let addr = self.listen.addr(service);
            let listener = TcpListener::bind(addr).await.map_err(|source| StartupError::Bind { service, addr, source })?;
            let bound = listener.local_addr().map_err(|source| StartupError::Bind { service, addr, source })?;
            tracing::info!(service = service.as_str(), addr = %bound, "listening");
            addrs.insert(service, bound);
            let mut stopped = stopped.clone();
            tasks.push(tokio::spawn(async move {
                axum::serve(listener, router)
                    .with_graceful_shutdown(async move {
                        let _ = stopped.wait_for(|s| *s).await;
                    })
                    .await
            }));
        }
        Ok(RunningServer { addrs, stop, tasks, emitter: self.emitter, gateway: self.gateway })
    }
}

pub struct RunningServer {
    addrs: BTreeMap<Service, SocketAddr>,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<std::io::Result<()>>>,
    emitter: Option<EventEmitter>,
    gateway: Option<Arc<ModelGateway>>,
}

impl RunningServer {
    pub fn addr(&self, service: Service) -> Option<SocketAddr> {
        self.addrs.get(&service).copied()
    }

    pub fn url(&self, service: Service) -> String {
        let addr = self.addr(service).unwrap_or_else(|| panic!("{service} is not running"));
        format!("http://{addr}")
    }

    pub fn emitter(&self) -> Option<&EventEmitter> {
        self.emitter.as_ref()
    }

    pub fn gateway(&self) -> Option<&Arc<ModelGateway>> {
        self.gateway.as_ref()
    }

    /// Stops accepting, drains in-flight requests, then gives pending
    /// events up to five seconds to go out.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for task in self.tasks {
            match task.await {
                Ok(Err(e)) => tracing::error!(error = %e, "listener failed"),
                Err(e) => tracing::error!(error = %e, "listener task panicked"),
                Ok(Ok(())) => {}
            }
        }
        if let Some(emitter) = &self.emitter {
            if !emitter.flush(Duration::from_secs(5)).await {
                tracing::warn!(pending = emitter.pending(), "events still pending at shutdown");
            }
        }
    }
}
