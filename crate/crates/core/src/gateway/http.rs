//! Provider backend speaking a small JSON protocol over HTTP.
//!
//! Request: `POST {endpoint}` with
//! `{model, temperature, system, user, response_schema?, tools?}`.
//! Response: `{"output": <string | object>}`. Credentials are read from an
//! environment variable named in configuration, never from config files.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendKind, ModelBackend, ModelRequest, Reply};
use crate::domain::FieldType;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum HttpProviderError {
    #[error("environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("cannot build http client: {0}")]
    Client(String),
}

pub struct HttpProvider {
    client: reqwest::Client,
    config: HttpProviderConfig,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, HttpProviderError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| HttpProviderError::MissingCredential(var.clone()))?),
            None => None,
        };
        let client = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(5))
            .build()
            .map_err(|e| HttpProviderError::Client(e.to_string()))?;
        Ok(HttpProvider { client, config, api_key })
    }

    fn body(&self, request: &ModelRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "system": request.prompt.system,
            "user": request.prompt.user,
        });
        if let Some(kind) = request.response_schema {
            let properties: serde_json::Map<String, Value> = kind
                .fields()
                .iter()
                .map(|f| {
                    let ty = match f.ty {
                        FieldType::Text => "string",
                        FieldType::Bool => "boolean",
                    };
                    (f.name.to_string(), json!({"type": ty}))
                })
                .collect();
            let required: Vec<&str> = kind.fields().iter().map(|f| f.name).collect();
            body["response_schema"] = json!({
                "type": "object",
                "properties": properties,
                "required": required,
                "additionalProperties": false,
            });
        }
        if request.thinking_enabled {
            body["thinking"] = json!(true);
        }
        if !request.tools.is_empty() {
            body["tools"] = serde_json::to_value(&request.tools).unwrap_or(Value::Null);
        }
        body
    }
}

#[async_trait]
impl ModelBackend for HttpProvider {
    fn kind(&self) -> BackendKind {
        BackendKind::HttpProvider
    }

    async fn complete(&self, request: &ModelRequest) -> Result<Reply, BackendError> {
        let mut call = self.client.post(&self.config.endpoint).json(&self.body(request));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().await.map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError::Unavailable(format!("provider returned {status}")));
        }
        let payload: Value = response.json().await.map_err(|e| BackendError::Malformed(e.to_string()))?;
        match payload.get("output") {
            Some(Value::String(s)) => Ok(Reply::Text(s.clone())),
            Some(v @ Value::Object(_)) => Ok(Reply::Json(v.clone())),
            _ => Err(BackendError::Malformed("reply lacks an `output` field".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ReportKind;
    use crate::gateway::{AgentName, Prompt};
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    use tokio::net::TcpListener;

    async fn one_shot_server(status: &'static str, body: &'static str) -> (String, tokio::task::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = tokio::spawn(async move {
            let (mut sock, _) = listener.accept().await.unwrap();
            let mut buf = vec![0u8; 64 * 1024];
            let mut seen = Vec::new();
            loop {
                let n = sock.read(&mut buf).await.unwrap();
                seen.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&seen).to_string();
                if let Some(idx) = text.find("\r\n\r\n") {
                    let len: usize = text
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                        .unwrap_or(0);
                    if seen.len() >= idx + 4 + len {
                        break;
                    }
                }
            }
            let reply = format!(
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            sock.write_all(reply.as_bytes()).await.unwrap();
            String::from_utf8_lossy(&seen).to_string()
        });
        (format!("http://{addr}/v1/complete"), handle)
    }

    fn request() -> ModelRequest {
        ModelRequest {
            agent: AgentName::Code,
            temperature: 0.2,
            thinking_enabled: false,
            prompt: Prompt { system: "sys".into(), user: "usr".into() },
            response_schema: Some(ReportKind::Code),
            tools: vec![],
            attempt: 1,
        }
    }

    #[tokio::test]
    async fn posts_contract_body_and_reads_output() {
        let (url, server) = one_shot_server("200 OK", r#"{"output": {"diagnosis": "d"}}"#).await;
        let provider = HttpProvider::new(HttpProviderConfig { endpoint: url, model: "m1".into(), api_key_env: None }).unwrap();
        let reply = provider.complete(&request()).await.unwrap();
        assert_eq!(reply, Reply::Json(json!({"diagnosis": "d"})));
        let raw = server.await.unwrap();
        let body: Value = serde_json::from_str(raw.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "m1");
        assert_eq!(body["system"], "sys");
        assert_eq!(body["user"], "usr");
        assert_eq!(body["response_schema"]["required"], json!(["diagnosis", "correct_components", "next_step", "alternative_approach"]));
        assert!(body.get("tools").is_none());
    }

    #[tokio::test]
    async fn server_error_is_unavailable() {
        let (url, _server) = one_shot_server("503 Service Unavailable", "{}").await;
        let provider = HttpProvider::new(HttpProviderConfig { endpoint: url, model: "m".into(), api_key_env: None }).unwrap();
        assert!(matches!(provider.complete(&request()).await, Err(BackendError::Unavailable(_))));
    }

    #[tokio::test]
    async fn unreachable_provider_is_unavailable() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let provider = HttpProvider::new(HttpProviderConfig { endpoint: url, model: "m".into(), api_key_env: None }).unwrap();
        assert!(matches!(provider.complete(&request()).await, Err(BackendError::Unavailable(_))));
    }

    #[test]
    fn missing_credential_env_is_refused() {
        let err = HttpProvider::new(HttpProviderConfig {
            endpoint: "http://localhost/".into(),
            model: "m".into(),
            api_key_env: Some("WHEELHOUSE_TEST_SURELY_UNSET_KEY".into()),
        })
        .unwrap_err();
        assert!(matches!(err, HttpProviderError::MissingCredential(_)));
    }
}
