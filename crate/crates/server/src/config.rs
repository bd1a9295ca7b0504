//! Deployment configuration: a TOML file plus environment overrides.
//!
//! Secrets never appear in the file. The file names the environment
//! variables that hold them, and those names are checked to look like
//! variable names so a pasted secret is refused.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wheelhouse_core::gateway::http::HttpProviderConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("`{field}` must name an environment variable (A-Z, 0-9, _), got something else")]
    NotAnEnvName { field: &'static str },
    #[error("environment variable `{0}` is not set")]
    MissingEnv(String),
    #[error("override {var}: {message}")]
    BadOverride { var: &'static str, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Service {
    Teaching,
    Autograde,
    Events,
    Feedback,
}

impl Service {
    pub const ALL: [Service; 4] = [Service::Teaching, Service::Autograde, Service::Events, Service::Feedback];

    pub fn as_str(self) -> &'static str {
        match self {
            Service::Teaching => "teaching",
            Service::Autograde => "autograde",
            Service::Events => "events",
            Service::Feedback => "feedback",
        }
    }

    pub fn parse(s: &str) -> Option<Service> {
        Service::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

impl std::fmt::Display for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Listen {
    pub teaching: SocketAddr,
    pub autograde: SocketAddr,
    pub events: SocketAddr,
    pub feedback: SocketAddr,
}

impl Listen {
    pub fn addr(&self, service: Service) -> SocketAddr {
        match service {
            Service::Teaching => self.teaching,
            Service::Autograde => self.autograde,
            Service::Events => self.events,
            Service::Feedback => self.feedback,
        }
    }

    fn addr_mut(&mut self, service: Service) -> &mut SocketAddr {
        match service {
            Service::Teaching => &mut self.teaching,
            Service::Autograde => &mut self.autograde,
            Service::Events => &mut self.events,
            Service::Feedback => &mut self.feedback,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Secrets {
    pub api_token_env: String,
    pub course_salt_env: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Scripted { rules: PathBuf },
    HttpProvider { endpoint: String, model: String, api_key_env: Option<String> },
}

impl ModelConfig {
    pub fn provider_config(&self) -> Option<HttpProviderConfig> {
        match self {
            ModelConfig::HttpProvider { endpoint, model, api_key_env } => Some(HttpProviderConfig {
                endpoint: endpoint.clone(),
                model: model.clone(),
                api_key_env: api_key_env.clone(),
            }),
            ModelConfig::Scripted { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub lessons: PathBuf,
    pub sessions: PathBuf,
    /// Defaults to the sessions file.
    #[serde(default)]
    pub conversations: Option<PathBuf>,
    pub events: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsConfig {
    /// Where teaching and autograde send events. When absent, events go
    /// straight to the in-process events service.
    #[serde(default)]
    pub endpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorConfig {
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_executor_timeout")]
    pub timeout_s: u64,
}

fn default_executor_timeout() -> u64 {
    35
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig { endpoint: None, timeout_s: default_executor_timeout() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentOverrides {
    /// Per-agent sampling temperature, keyed by agent name.
    #[serde(default)]
    pub temperature: BTreeMap<String, f32>,
    /// Per-call timeout for model requests.
    #[serde(default)]
    pub call_timeout_s: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen: Listen,
    pub secrets: Secrets,
    pub model: ModelConfig,
    pub paths: Paths,
    #[serde(default)]
    pub events: EventsConfig,
    #[serde(default)]
    pub executor: ExecutorConfig,
    #[serde(default)]
    pub agents: AgentOverrides,
    /// Browser origins allowed to call the JSON endpoints.
    #[serde(default)]
    pub cors_origins: Vec<String>,
}

fn is_env_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
        && !s.starts_with(|c: char| c.is_ascii_digit())
}

/// Environment variables that override file values.
pub const OVERRIDES: &[&str] = &[
    "WHEELHOUSE_TEACHING_ADDR",
    "WHEELHOUSE_AUTOGRADE_ADDR",
    "WHEELHOUSE_EVENTS_ADDR",
    "WHEELHOUSE_FEEDBACK_ADDR",
    "WHEELHOUSE_LESSONS_DIR",
    "WHEELHOUSE_SESSIONS_PATH",
    "WHEELHOUSE_EVENTS_DIR",
    "WHEELHOUSE_EVENTS_ENDPOINT",
    "WHEELHOUSE_EXECUTOR_ENDPOINT",
    "WHEELHOUSE_SCRIPTED_RULES",
];

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: GatewayConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, applies process-environment overrides, and resolves
    /// relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml(&text)?;
        config.apply_overrides(|k| std::env::var(k).ok())?;
        if let Some(base) = path.parent() {
            config.resolve_relative(base);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !is_env_name(&self.secrets.api_token_env) {
            return Err(ConfigError::NotAnEnvName { field: "secrets.api_token_env" });
        }
        if !is_env_name(&self.secrets.course_salt_env) {
            return Err(ConfigError::NotAnEnvName { field: "secrets.course_salt_env" });
        }
        if let ModelConfig::HttpProvider { api_key_env: Some(var), .. } = &self.model {
            if !is_env_name(var) {
                return Err(ConfigError::NotAnEnvName { field: "model.api_key_env" });
            }
        }
        for name in self.agents.temperature.keys() {
            if !wheelhouse_core::gateway::AgentName::ALL.iter().any(|a| a.as_str() == name) {
                return Err(ConfigError::Invalid(format!("agents.temperature: unknown agent `{name}`")));
            }
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        for (var, service) in OVERRIDES.iter().take(4).zip(Service::ALL) {
            if let Some(v) = lookup(var) {
                *self.listen.addr_mut(service) =
                    v.parse().map_err(|e: std::net::AddrParseError| ConfigError::BadOverride { var, message: e.to_string() })?;
            }
        }
        if let Some(v) = lookup("WHEELHOUSE_LESSONS_DIR") {
            self.paths.lessons = v.into();
        }
        if let Some(v) = lookup("WHEELHOUSE_SESSIONS_PATH") {
            self.paths.sessions = v.into();
        }
        if let Some(v) = lookup("WHEELHOUSE_EVENTS_DIR") {
            self.paths.events = v.into();
        }
        if let Some(v) = lookup("WHEELHOUSE_EVENTS_ENDPOINT") {
            self.events.endpoint = (!v.is_empty()).then_some(v);
        }
        if let Some(v) = lookup("WHEELHOUSE_EXECUTOR_ENDPOINT") {
            self.executor.endpoint = (!v.is_empty()).then_some(v);
        }
        if let Some(v) = lookup("WHEELHOUSE_SCRIPTED_RULES") {
            match &mut self.model {
                ModelConfig::Scripted { rules } => *rules = v.into(),
                ModelConfig::HttpProvider { .. } => {
                    return Err(ConfigError::BadOverride {
                        var: "WHEELHOUSE_SCRIPTED_RULES",
                        message: "the configured backend is not scripted".into(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.lessons);
        fix(&mut self.paths.sessions);
        fix(&mut self.paths.events);
        if let Some(c) = &mut self.paths.conversations {
            fix(c);
        }
        if let ModelConfig::Scripted { rules } = &mut self.model {
            fix(rules);
        }
    }

    pub fn conversations_path(&self) -> &Path {
        self.paths.conversations.as_deref().unwrap_or(&self.paths.sessions)
    }

    pub fn api_token(&self) -> Result<String, ConfigError> {
        read_secret(&self.secrets.api_token_env)
    }
}

fn read_secret(var: &str) -> Result<String, ConfigError> {
    match std::env::var(var) {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(ConfigError::MissingEnv(var.to_string())),
    }
}
