//! Deterministic rule-driven stand-in for a model provider.
//!
//! Rules are tried in order; the first whose agent and prompt predicate match
//! answers, after its injected delay. Nothing here touches the network.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{AgentName, BackendError, BackendKind, ModelBackend, ModelRequest, Reply};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    #[default]
    Any,
    Contains(String),
    Regex(String),
    AllOf(Vec<Predicate>),
    Not(Box<Predicate>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptResponse {
    Text(String),
    Json(Value),
    /// Behaves as if the provider were down.
    Unavailable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub agent: AgentName,
    #[serde(default)]
    pub when: Predicate,
    pub response: ScriptResponse,
    #[serde(default)]
    pub delay_ms: u64,
}

impl ScriptRule {
    pub fn new(agent: AgentName, when: Predicate, response: ScriptResponse) -> Self {
        ScriptRule { agent, when, response, delay_ms: 0 }
    }

    pub fn with_delay_ms(mut self, delay_ms: u64) -> Self {
        self.delay_ms = delay_ms;
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("rule {index}: invalid regex: {source}")]
    BadRegex { index: usize, source: regex::Error },
    #[error("cannot read rule file: {0}")]
    Io(#[from] std::io::Error),
    #[error("rule file does not parse: {0}")]
    Parse(#[from] serde_json::Error),
}

enum Matcher {
    Any,
    Contains(String),
    Regex(Regex),
    AllOf(Vec<Matcher>),
    Not(Box<Matcher>),
}

impl Matcher {
    fn compile(p: &Predicate, index: usize) -> Result<Matcher, ScriptError> {
        Ok(match p {
            Predicate::Any => Matcher::Any,
            Predicate::Contains(s) => Matcher::Contains(s.clone()),
            Predicate::Regex(r) => {
                Matcher::Regex(Regex::new(r).map_err(|source| ScriptError::BadRegex { index, source })?)
            }
            Predicate::AllOf(ps) => {
                Matcher::AllOf(ps.iter().map(|p| Matcher::compile(p, index)).collect::<Result<_, _>>()?)
            }
            Predicate::Not(p) => Matcher::Not(Box::new(Matcher::compile(p, index)?)),
        })
    }

    fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => text.contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(text),
            Matcher::AllOf(ms) => ms.iter().all(|m| m.matches(text)),
            Matcher::Not(m) => !m.matches(text),
        }
    }
}

struct CompiledRule {
    rule: ScriptRule,
    matcher: Matcher,
}

pub struct ScriptedBackend {
    rules: Vec<CompiledRule>,
    available: AtomicBool,
}

impl std::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedBackend").field("rules", &self.rules.len()).finish()
    }
}

/// Short stable digest of a prompt, for error messages that must not echo it.
pub fn prompt_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..6])
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self, ScriptError> {
        let rules = rules
            .into_iter()
            .enumerate()
            .map(|(i, rule)| Ok(CompiledRule { matcher: Matcher::compile(&rule.when, i)?, rule }))
            .collect::<Result<_, ScriptError>>()?;
        Ok(ScriptedBackend { rules, available: AtomicBool::new(true) })
    }

    /// Loads a JSON array of rules.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let rules: Vec<ScriptRule> = serde_json::from_slice(&std::fs::read(path)?)?;
        ScriptedBackend::new(rules)
    }

    /// Simulates a provider outage for every agent.
    pub fn set_available(&self, available: bool) {
        self.available.store(available, Ordering::SeqCst);
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    fn find(&self, agent: AgentName, text: &str) -> Option<&ScriptRule> {
        self.rules
            .iter()
            .find(|r| r.rule.agent == agent && r.matcher.matches(text))
            .map(|r| &r.rule)
    }
}

#[async_trait]
impl ModelBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    async fn complete(&self, request: &ModelRequest) -> Result<Reply, BackendError> {
        if !self.available.load(Ordering::SeqCst) {
            return Err(BackendError::Unavailable("scripted backend switched off".into()));
        }
        let text = request.prompt.full_text();
        let rule = self.find(request.agent, &text).ok_or_else(|| BackendError::NoMatchingRule {
            agent: request.agent,
            prompt_hash: prompt_hash(&text),
        })?;
        if rule.delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(rule.delay_ms)).await;
        }
        match &rule.response {
            ScriptResponse::Text(t) => Ok(Reply::Text(t.clone())),
            ScriptResponse::Json(v) => Ok(Reply::Json(v.clone())),
            ScriptResponse::Unavailable => Err(BackendError::Unavailable("scripted outage".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Prompt;
    use std::time::Instant;

    fn request(agent: AgentName, user: &str) -> ModelRequest {
        ModelRequest {
            agent,
            temperature: 0.2,
            thinking_enabled: false,
            prompt: Prompt { system: String::new(), user: user.into() },
            response_schema: None,
            tools: vec![],
            attempt: 1,
        }
    }

    fn text(s: &str) -> ScriptResponse {
        ScriptResponse::Text(s.into())
    }

    #[tokio::test]
    async fn matching_rule_fires_after_delay() {
        let backend = ScriptedBackend::new(vec![ScriptRule::new(
            AgentName::Code,
            Predicate::Contains("QiskitError".into()),
            text("fixture-A"),
        )
        .with_delay_ms(400)])
        .unwrap();
        let start = Instant::now();
        let reply = backend.complete(&request(AgentName::Code, "got a QiskitError here")).await.unwrap();
        assert!(start.elapsed() >= Duration::from_millis(400));
        assert_eq!(reply, Reply::Text("fixture-A".into()));
    }

    #[tokio::test]
    async fn first_match_wins() {
        let backend = ScriptedBackend::new(vec![
            ScriptRule::new(AgentName::Video, Predicate::Regex("h+ello".into()), text("first")),
            ScriptRule::new(AgentName::Video, Predicate::Any, text("second")),
        ])
        .unwrap();
        assert_eq!(backend.complete(&request(AgentName::Video, "hello")).await.unwrap(), Reply::Text("first".into()));
        assert_eq!(backend.complete(&request(AgentName::Video, "bye")).await.unwrap(), Reply::Text("second".into()));
    }

    #[tokio::test]
    async fn no_rule_is_an_error_naming_the_agent() {
        let backend = ScriptedBackend::new(vec![ScriptRule::new(AgentName::Video, Predicate::Any, text("x"))]).unwrap();
        let err = backend.complete(&request(AgentName::Guidance, "alice asks")).await.unwrap_err();
        let BackendError::NoMatchingRule { agent, prompt_hash } = err else { panic!() };
        assert_eq!(agent, AgentName::Guidance);
        assert_eq!(prompt_hash.len(), 12);
    }

    #[tokio::test]
    async fn switched_off_backend_is_unavailable() {
        let backend = ScriptedBackend::new(vec![ScriptRule::new(AgentName::Video, Predicate::Any, text("x"))]).unwrap();
        backend.set_available(false);
        assert!(matches!(backend.complete(&request(AgentName::Video, "")).await, Err(BackendError::Unavailable(_))));
    }

    #[test]
    fn combinators_and_bad_regex() {
        let p = Predicate::AllOf(vec![
            Predicate::Contains("a".into()),
            Predicate::Not(Box::new(Predicate::Contains("b".into()))),
        ]);
        let m = Matcher::compile(&p, 0).unwrap();
        assert!(m.matches("a"));
        assert!(!m.matches("ab"));
        assert!(ScriptedBackend::new(vec![ScriptRule::new(AgentName::Video, Predicate::Regex("(".into()), text("x"))]).is_err());
    }

    #[test]
    fn rules_parse_from_json() {
        let json = r#"[{"agent": "code", "when": {"contains": "x"}, "response": {"json": {"a": 1}}, "delay_ms": 5},
                       {"agent": "video", "response": "unavailable"}]"#;
        let rules: Vec<ScriptRule> = serde_json::from_str(json).unwrap();
        assert_eq!(rules[0].when, Predicate::Contains("x".into()));
        assert_eq!(rules[1].when, Predicate::Any);
        assert_eq!(rules[1].response, ScriptResponse::Unavailable);
    }
}
