//! Client for the sandboxed code execution service.

use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionError {
    #[serde(rename = "type")]
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub result_repr: String,
    #[serde(default)]
    pub error: Option<ExecutionError>,
    #[serde(default)]
    pub duration_ms: u64,
}

impl ExecutionResult {
    /// Text shown as the cell's output.
    pub fn output_text(&self) -> String {
        match (self.stdout.is_empty(), self.result_repr.is_empty()) {
            (_, true) => self.stdout.clone(),
            (true, false) => self.result_repr.clone(),
            (false, false) => format!("{}\n{}", self.stdout.trim_end(), self.result_repr),
        }
    }

    pub fn error_text(&self) -> Option<String> {
        self.error.as_ref().map(|e| format!("{}: {}", e.kind, e.message))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("execution service unreachable: {0}")]
    Unreachable(String),
    #[error("execution service returned {0}")]
    Status(u16),
    #[error("execution service reply does not parse: {0}")]
    Malformed(String),
}

fn unreachable(e: reqwest::Error) -> ExecutorError {
    let e = e.without_url();
    let mut message = e.to_string();
    let mut source = std::error::Error::source(&e);
    while let Some(cause) = source {
        message.push_str(": ");
        message.push_str(&cause.to_string());
        source = cause.source();
    }
    ExecutorError::Unreachable(message)
}

#[derive(Clone)]
pub struct ExecutorClient {
    client: reqwest::Client,
    base: String,
}

impl ExecutorClient {
    pub fn new(base: impl Into<String>, timeout: Duration) -> Result<Self, reqwest::Error> {
        let client = reqwest::Client::builder().timeout(timeout).build()?;
        Ok(ExecutorClient { client, base: base.into().trim_end_matches('/').to_string() })
    }

    pub async fn execute(&self, session_id: &str, cell_id: &str, code: &str) -> Result<ExecutionResult, ExecutorError> {
        let response = self
            .client
            .post(format!("{}/execute", self.base))
            .json(&serde_json::json!({"session_id": session_id, "cell_id": cell_id, "code": code}))
            .send()
            .await
            .map_err(unreachable)?;
        if !response.status().is_success() {
            return Err(ExecutorError::Status(response.status().as_u16()));
        }
        response.json().await.map_err(|e| ExecutorError::Malformed(e.to_string()))
    }

    pub async fn reset(&self, session_id: &str) -> Result<(), ExecutorError> {
        let response = self
            .client
            .post(format!("{}/session/{session_id}/reset", self.base))
            .send()
            .await
            .map_err(unreachable)?;
        if response.status().is_success() {
            Ok(())
        } else {
            Err(ExecutorError::Status(response.status().as_u16()))
        }
    }
}
