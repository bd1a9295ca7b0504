//! The single path to any language model.
//!
//! Agents are described by an [`AgentSpec`]; prompts are rendered here from
//! the spec's templates and caller-supplied bindings; completions go through a
//! pluggable [`ModelBackend`]. Structured completions are validated against the
//! domain schemas and retried with the violation list fed back, so a caller
//! never receives a record that fails validation.

pub mod http;
pub mod prompts;
pub mod scripted;
pub mod template;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{validate_as, Report, ReportKind, Violation, DEFAULT_FIELD_CAP};

pub use template::{render_template, Bindings, Rendered, TemplateError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentName {
    Video,
    Guidance,
    Code,
    Synthesizer,
    Autograder,
    Feedback,
}

impl AgentName {
    pub const ALL: [AgentName; 6] = [
        AgentName::Video,
        AgentName::Guidance,
        AgentName::Code,
        AgentName::Synthesizer,
        AgentName::Autograder,
        AgentName::Feedback,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentName::Video => "video",
            AgentName::Guidance => "guidance",
            AgentName::Code => "code",
            AgentName::Synthesizer => "synthesizer",
            AgentName::Autograder => "autograder",
            AgentName::Feedback => "feedback",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AgentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSchema {
    Report(ReportKind),
    FreeText,
}

/// A callable capability exposed to a model. No agent in this system
/// registers one; the field exists so the empty surface is observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: AgentName,
    /// Rendered into the system part of the prompt.
    pub instruction_template: String,
    /// Rendered into the user part of the prompt.
    pub input_template: String,
    pub temperature: f32,
    pub output_schema: OutputSchema,
    #[serde(default)]
    pub thinking_enabled: bool,
    #[serde(default)]
    pub tools: Vec<ToolDescriptor>,
}

impl AgentSpec {
    /// The built-in spec for `name` with its default temperature.
    pub fn default_for(name: AgentName) -> AgentSpec {
        use prompts::*;
        let (instructions, input, temperature, schema) = match name {
            AgentName::Video => (VIDEO_INSTRUCTIONS.to_string(), VIDEO_INPUT, 0.3, OutputSchema::Report(ReportKind::Video)),
            AgentName::Guidance => (
                GUIDANCE_INSTRUCTIONS.to_string(),
                GUIDANCE_INPUT,
                0.4,
                OutputSchema::Report(ReportKind::Guidance),
            ),
            AgentName::Code => (CODE_INSTRUCTIONS.to_string(), CODE_INPUT, 0.2, OutputSchema::Report(ReportKind::Code)),
            AgentName::Synthesizer => (synthesizer_instructions(), SYNTHESIZER_INPUT, 0.5, OutputSchema::FreeText),
            AgentName::Autograder => (
                AUTOGRADER_INSTRUCTIONS.to_string(),
                AUTOGRADER_INPUT,
                0.2,
                OutputSchema::Report(ReportKind::Grade),
            ),
            AgentName::Feedback => (feedback_instructions(), FEEDBACK_INPUT, 0.2, OutputSchema::FreeText),
        };
        AgentSpec {
            name,
            instruction_template: instructions,
            input_template: input.to_string(),
            temperature,
            output_schema: schema,
            thinking_enabled: false,
            tools: Vec::new(),
        }
    }

    pub fn with_temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature.clamp(0.0, 1.0);
        self
    }
}

/// The full set of agent specs a deployment runs with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSet {
    pub video: AgentSpec,
    pub guidance: AgentSpec,
    pub code: AgentSpec,
    pub synthesizer: AgentSpec,
    pub autograder: AgentSpec,
    pub feedback: AgentSpec,
}

impl Default for AgentSet {
    fn default() -> Self {
        AgentSet {
            video: AgentSpec::default_for(AgentName::Video),
            guidance: AgentSpec::default_for(AgentName::Guidance),
            code: AgentSpec::default_for(AgentName::Code),
            synthesizer: AgentSpec::default_for(AgentName::Synthesizer),
            autograder: AgentSpec::default_for(AgentName::Autograder),
            feedback: AgentSpec::default_for(AgentName::Feedback),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    /// The text predicates and privacy scans look at.
    pub fn full_text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

/// Exactly what a backend is asked to do for one attempt.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelRequest {
    pub agent: AgentName,
    pub temperature: f32,
    pub thinking_enabled: bool,
    pub prompt: Prompt,
    pub response_schema: Option<ReportKind>,
    pub tools: Vec<ToolDescriptor>,
    pub attempt: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reply {
    Text(String),
    Json(Value),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    HttpProvider,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Scripted => "scripted",
            BackendKind::HttpProvider => "http_provider",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("model backend unavailable: {0}")]
    Unavailable(String),
    #[error("no scripted rule matches agent `{agent}` (prompt {prompt_hash})")]
    NoMatchingRule { agent: AgentName, prompt_hash: String },
    #[error("malformed backend reply: {0}")]
    Malformed(String),
}

#[async_trait]
pub trait ModelBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    async fn complete(&self, request: &ModelRequest) -> Result<Reply, BackendError>;
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("schema failure after {attempts} attempts: {}", list(.violations))]
    SchemaFailure { attempts: u32, violations: Vec<Violation> },
    #[error("model backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("model call exceeded {0:?}")]
    Timeout(Duration),
    #[error("model returned an empty response")]
    EmptyResponse,
    #[error("no scripted rule matches agent `{agent}` (prompt {prompt_hash})")]
    NoMatchingRule { agent: AgentName, prompt_hash: String },
    #[error("agent `{agent}` is not configured for {expected}")]
    InvalidSpec { agent: AgentName, expected: String },
}

fn list(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl From<BackendError> for GatewayError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Unavailable(m) | BackendError::Malformed(m) => GatewayError::BackendUnavailable(m),
            BackendError::NoMatchingRule { agent, prompt_hash } => GatewayError::NoMatchingRule { agent, prompt_hash },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CallPolicy {
    pub max_retries: u32,
    pub call_timeout: Duration,
    pub field_cap: usize,
}

impl Default for CallPolicy {
    fn default() -> Self {
        CallPolicy { max_retries: 2, call_timeout: Duration::from_secs(30), field_cap: DEFAULT_FIELD_CAP }
    }
}

/// Sees every request before it reaches the backend.
pub trait CallObserver: Send + Sync {
    fn on_request(&self, request: &ModelRequest);
}

/// Keeps every request; used to inspect prompts at the gateway seam.
#[derive(Default)]
pub struct RecordingObserver {
    requests: Mutex<Vec<ModelRequest>>,
}

impl RecordingObserver {
    pub fn requests(&self) -> Vec<ModelRequest> {
        self.requests.lock().expect("observer poisoned").clone()
    }

    pub fn for_agent(&self, agent: AgentName) -> Vec<ModelRequest> {
        self.requests().into_iter().filter(|r| r.agent == agent).collect()
    }
}

impl CallObserver for RecordingObserver {
    fn on_request(&self, request: &ModelRequest) {
        self.requests.lock().expect("observer poisoned").push(request.clone());
    }
}

pub struct ModelGateway {
    backend: Arc<dyn ModelBackend>,
    policy: CallPolicy,
    calls: [AtomicU64; 6],
    observer: Option<Arc<dyn CallObserver>>,
}

impl fmt::Debug for ModelGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelGateway")
            .field("backend", &self.backend.kind())
            .field("policy", &self.policy)
            .field("total_calls", &self.total_calls())
            .finish()
    }
}

impl ModelGateway {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        ModelGateway { backend, policy: CallPolicy::default(), calls: Default::default(), observer: None }
    }

    pub fn with_policy(mut self, policy: CallPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_observer(mut self, observer: Arc<dyn CallObserver>) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn policy(&self) -> CallPolicy {
        self.policy
    }

    /// Backend calls issued for `agent`, counting every retry attempt.
    pub fn calls(&self, agent: AgentName) -> u64 {
        self.calls[agent.index()].load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> u64 {
        self.calls.iter().map(|c| c.load(Ordering::SeqCst)).sum()
    }

    /// Renders both halves of `spec`'s prompt.
    pub fn prompt(&self, spec: &AgentSpec, bindings: &Bindings) -> Result<Prompt, GatewayError> {
        let system = render_template(&spec.instruction_template, bindings)?;
        let user = render_template(&spec.input_template, bindings)?;
        // Each binding is normally used by only one half.
        for name in system.unused.iter().filter(|n| user.unused.contains(n)) {
            tracing::warn!(agent = %spec.name, placeholder = %name, "binding unused by both templates");
        }
        Ok(Prompt { system: system.text, user: user.text })
    }

    async fn call(&self, spec: &AgentSpec, prompt: Prompt, schema: Option<ReportKind>, attempt: u32) -> Result<Reply, GatewayError> {
        let request = ModelRequest {
            agent: spec.name,
            temperature: spec.temperature,
            thinking_enabled: spec.thinking_enabled,
            prompt,
            response_schema: schema,
            tools: spec.tools.clone(),
            attempt,
        };
        if let Some(observer) = &self.observer {
            observer.on_request(&request);
        }
        self.calls[spec.name.index()].fetch_add(1, Ordering::SeqCst);
        match tokio::time::timeout(self.policy.call_timeout, self.backend.complete(&request)).await {
            Ok(reply) => Ok(reply?),
            Err(_) => Err(GatewayError::Timeout(self.policy.call_timeout)),
        }
    }

    /// Completes `prompt` as a `T`, retrying schema failures up to the
    /// policy's `max_retries` with the violations appended to the prompt.
    pub async fn complete_structured<T: Report>(&self, spec: &AgentSpec, prompt: Prompt) -> Result<T, GatewayError> {
        if spec.output_schema != OutputSchema::Report(T::KIND) {
            return Err(GatewayError::InvalidSpec { agent: spec.name, expected: format!("{} reports", T::KIND.as_str()) });
        }
        let total = self.policy.max_retries + 1;
        let mut current = prompt.clone();
        let mut violations = Vec::new();
        for attempt in 1..=total {
            let reply = self.call(spec, current.clone(), Some(T::KIND), attempt).await?;
            match parse_reply(reply).and_then(|v| validate_as::<T>(&v, self.policy.field_cap)) {
                Ok(record) => return Ok(record),
                Err(found) => {
                    tracing::warn!(agent = %spec.name, attempt, violations = %list(&found), "structured output rejected");
                    violations = found;
                    current = retry_prompt::<T>(&prompt, attempt + 1, total, &violations);
                }
            }
        }
        Err(GatewayError::SchemaFailure { attempts: total, violations })
    }

    /// Completes `prompt` as free text. Blank replies are an error.
    pub async fn complete_text(&self, spec: &AgentSpec, prompt: Prompt) -> Result<String, GatewayError> {
        if spec.output_schema != OutputSchema::FreeText {
            return Err(GatewayError::InvalidSpec { agent: spec.name, expected: "free text".into() });
        }
        let text = match self.call(spec, prompt, None, 1).await? {
            Reply::Text(t) => t,
            Reply::Json(Value::String(s)) => s,
            Reply::Json(other) => other.to_string(),
        };
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyResponse);
        }
        Ok(text.trim().to_string())
    }
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(inner) = t.strip_prefix("```") else { return t };
    let inner = inner.strip_prefix("json").unwrap_or(inner);
    inner.strip_suffix("```").unwrap_or(inner).trim()
}

fn parse_reply(reply: Reply) -> Result<Value, Vec<Violation>> {
    match reply {
        Reply::Json(v) => Ok(v),
        Reply::Text(t) => serde_json::from_str(strip_fences(&t)).map_err(|e| vec![Violation::NotJson(e.to_string())]),
    }
}

fn retry_prompt<T: Report>(original: &Prompt, attempt: u32, total: u32, violations: &[Violation]) -> Prompt {
    let fields: Vec<&str> = T::FIELDS.iter().map(|f| f.name).collect();
    Prompt {
        system: original.system.clone(),
        user: format!(
            "{}\n\n[schema retry: attempt {attempt} of {total}]\nYour previous reply was rejected: {}.\n\
             Reply again with only a JSON object containing exactly these fields: {}.",
            original.user,
            list(violations),
            fields.join(", ")
        ),
    }
}
