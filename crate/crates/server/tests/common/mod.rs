#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use reqwest::{Client, RequestBuilder, Response, StatusCode};
use serde_json::{json, Value};
use wheelhouse_server::GatewayConfig;

pub const TOKEN: &str = "test-token-not-a-secret";
pub const SALT: &str = "server-test-salt-0001";

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Config with every listener on an ephemeral port and state under `dir`.
pub fn test_config(dir: &Path) -> GatewayConfig {
    config_with(dir, "", "")
}

pub fn config_with(dir: &Path, extra_events: &str, extra_paths: &str) -> GatewayConfig {
    let text = format!(
        r#"
        [listen]
        teaching = "127.0.0.1:0"
        autograde = "127.0.0.1:0"
        events = "127.0.0.1:0"
        feedback = "127.0.0.1:0"

        [secrets]
        api_token_env = "WHEELHOUSE_TEST_TOKEN"
        course_salt_env = "WHEELHOUSE_TEST_SALT"

        [model]
        backend = "scripted"
        rules = "{rules}"

        [paths]
        lessons = "{lessons}"
        sessions = "{dir}/sessions.redb"
        events = "{dir}/events"
        {extra_paths}

        [events]
        {extra_events}
        "#,
        rules = repo_path("fixtures/scripted-rules.json").display(),
        lessons = repo_path("lessons").display(),
        dir = dir.display(),
    );
    GatewayConfig::from_toml(&text).expect("test config parses")
}

#[derive(Clone)]
pub struct Api {
    pub client: Client,
    pub base: String,
    pub token: Option<String>,
}

impl Api {
    pub fn new(base: impl Into<String>) -> Self {
        Api {
            client: Client::builder().timeout(Duration::from_secs(30)).build().unwrap(),
            base: base.into(),
            token: Some(TOKEN.into()),
        }
    }

    pub fn anonymous(mut self) -> Self {
        self.token = None;
        self
    }

    fn auth(&self, r: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => r.bearer_auth(t),
            None => r,
        }
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        read(self.auth(self.client.get(format!("{}{path}", self.base))).send().await.unwrap()).await
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        read(self.auth(self.client.post(format!("{}{path}", self.base))).json(&body).send().await.unwrap()).await
    }

    pub async fn put(&self, path: &str, body: Value) -> (StatusCode, Value) {
        read(self.auth(self.client.put(format!("{}{path}", self.base))).json(&body).send().await.unwrap()).await
    }
}

async fn read(r: Response) -> (StatusCode, Value) {
    let status = r.status();
    let text = r.text().await.unwrap();
    let value = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(json!({ "raw": text })) };
    (status, value)
}

/// Polls until `f` holds or five seconds pass.
pub async fn eventually<F, Fut>(mut f: F) -> bool
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = bool>,
{
    for _ in 0..100 {
        if f().await {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    false
}
