//! The ingestion boundary: validates hostile input, replaces identities with
//! pseudonyms, and appends. Nothing upstream of this sees a pseudonym and
//! nothing downstream sees a raw id.

use std::sync::Arc;

use serde_json::{json, Map, Value};

use super::pseudonym::{pseudonymize, pseudonymize_session, CourseSalt};
use super::store::{EventStore, NewEvent, StorageFailure};
use crate::domain::{check_payload, timestamp_millis, EventBody, EventCategory, InteractionEvent, RawEvent};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("event rejected; bad fields: {}", .0.join(", "))]
    SchemaRejection(Vec<String>),
    #[error(transparent)]
    Storage(#[from] StorageFailure),
}

const TOP_LEVEL: [&str; 6] = ["user_id", "lesson_id", "session_id", "timestamp", "category", "payload"];

pub struct Ingestor {
    store: Arc<dyn EventStore>,
    salt: CourseSalt,
}

fn non_empty_str<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a str> {
    obj.get(key).and_then(Value::as_str).filter(|s| !s.trim().is_empty())
}

impl Ingestor {
    pub fn new(store: Arc<dyn EventStore>, salt: CourseSalt) -> Self {
        Ingestor { store, salt }
    }

    pub fn store(&self) -> &Arc<dyn EventStore> {
        &self.store
    }

    /// Validates and stores one wire-format event.
    pub fn ingest(&self, raw: &Value) -> Result<InteractionEvent, IngestError> {
        let Some(obj) = raw.as_object() else {
            return Err(IngestError::SchemaRejection(vec!["<body>".into()]));
        };
        let mut bad = Vec::new();
        let user_id = non_empty_str(obj, "user_id");
        if user_id.is_none() {
            bad.push("user_id".to_string());
        }
        let lesson_id = non_empty_str(obj, "lesson_id")
            .filter(|l| crate::domain::check_slug(l).is_ok() && !l.starts_with('.'));
        if lesson_id.is_none() {
            bad.push("lesson_id".into());
        }
        let session_id = non_empty_str(obj, "session_id");
        if session_id.is_none() {
            bad.push("session_id".into());
        }
        let timestamp = obj.get("timestamp").and_then(Value::as_str).and_then(timestamp_millis::parse);
        if timestamp.is_none() {
            bad.push("timestamp".into());
        }
        let category = obj.get("category").and_then(Value::as_str).and_then(EventCategory::parse);
        if category.is_none() {
            bad.push("category".into());
        }
        match (category, obj.get("payload")) {
            (Some(c), Some(Value::Object(payload))) => bad.extend(check_payload(c, payload)),
            (_, Some(Value::Object(_))) => {}
            _ => bad.push("payload".into()),
        }
        bad.extend(obj.keys().filter(|k| !TOP_LEVEL.contains(&k.as_str())).cloned());
        if !bad.is_empty() {
            return Err(IngestError::SchemaRejection(bad));
        }
        let body: EventBody = serde_json::from_value(json!({"category": obj["category"], "payload": obj["payload"]}))
            .map_err(|_| IngestError::SchemaRejection(vec!["payload".into()]))?;
        let (user_id, lesson_id, session_id) = (user_id.unwrap(), lesson_id.unwrap(), session_id.unwrap());
        let stored = self.store.append(NewEvent {
            pseudonym: pseudonymize(user_id, &self.salt),
            lesson_id: lesson_id.to_string(),
            session_id: pseudonymize_session(session_id, &self.salt),
            timestamp: timestamp.unwrap(),
            body,
        })?;
        tracing::debug!(event_id = stored.event_id.0, pseudonym = %stored.pseudonym, category = %stored.category(), "event stored");
        Ok(stored)
    }

    pub fn ingest_event(&self, event: &RawEvent) -> Result<InteractionEvent, IngestError> {
        self.ingest(&serde_json::to_value(event).expect("raw events serialize"))
    }
}
