//! Event delivery to a remote events service.

use std::time::Duration;

use async_trait::async_trait;
use wheelhouse_core::domain::RawEvent;
use wheelhouse_core::events::{EventSink, SinkError};

pub struct HttpEventSink {
    client: reqwest::Client,
    endpoint: String,
    token: String,
}

impl HttpEventSink {
    pub fn new(endpoint: impl Into<String>, token: impl Into<String>) -> Result<Self, reqwest::Error> {
        let client = reqwest::Client::builder().timeout(Duration::from_secs(5)).build()?;
        Ok(HttpEventSink { client, endpoint: endpoint.into(), token: token.into() })
    }
}

#[async_trait]
impl EventSink for HttpEventSink {
    async fn send(&self, event: &RawEvent) -> Result<(), SinkError> {
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.token)
            .json(event)
            .send()
            .await
            .map_err(|e| SinkError(e.without_url().to_string()))?;
        if response.status().is_success() {
            Ok(())
        } else {
            Err(SinkError(format!("events service returned {}", response.status())))
        }
    }
}
