//! Fire-and-forget event emission for the student-facing paths. A failed
//! send is counted and logged; it never reaches the caller.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

use super::ingest::Ingestor;
use crate::domain::RawEvent;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("event delivery failed: {0}")]
pub struct SinkError(pub String);

#[async_trait]
pub trait EventSink: Send + Sync {
    async fn send(&self, event: &RawEvent) -> Result<(), SinkError>;
}

/// Delivers straight into an in-process ingestor.
pub struct LocalSink(pub Arc<Ingestor>);

#[async_trait]
impl EventSink for LocalSink {
    async fn send(&self, event: &RawEvent) -> Result<(), SinkError> {
        self.0.ingest_event(event).map(|_| ()).map_err(|e| SinkError(e.to_string()))
    }
}

/// Drops everything; used where analytics are switched off.
pub struct NullSink;

#[async_trait]
impl EventSink for NullSink {
    async fn send(&self, _event: &RawEvent) -> Result<(), SinkError> {
        Err(SinkError("no event sink configured".into()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitStats {
    pub attempted: u64,
    pub delivered: u64,
    pub failed: u64,
}

#[derive(Default)]
struct Counters {
    attempted: AtomicU64,
    delivered: AtomicU64,
    failed: AtomicU64,
    pending: AtomicU64,
}

#[derive(Clone)]
pub struct EventEmitter {
    sink: Arc<dyn EventSink>,
    counters: Arc<Counters>,
    idle: Arc<Notify>,
}

impl EventEmitter {
    pub fn new(sink: Arc<dyn EventSink>) -> Self {
        EventEmitter { sink, counters: Arc::default(), idle: Arc::new(Notify::new()) }
    }

    /// Sends `events` in order on a background task and returns at once.
    pub fn emit(&self, events: Vec<RawEvent>) {
        if events.is_empty() {
            return;
        }
        self.counters.pending.fetch_add(events.len() as u64, Ordering::SeqCst);
        let (sink, counters, idle) = (self.sink.clone(), self.counters.clone(), self.idle.clone());
        tokio::spawn(async move {
            for event in events {
                counters.attempted.fetch_add(1, Ordering::SeqCst);
                match sink.send(&event).await {
                    Ok(()) => {
                        counters.delivered.fetch_add(1, Ordering::SeqCst);
                    }
                    Err(e) => {
                        counters.failed.fetch_add(1, Ordering::SeqCst);
                        tracing::warn!(category = %event.body.category(), error = %e, "event dropped");
                    }
                }
                if counters.pending.fetch_sub(1, Ordering::SeqCst) == 1 {
                    idle.notify_waiters();
                }
            }
        });
    }

    pub fn stats(&self) -> EmitStats {
        EmitStats {
            attempted: self.counters.attempted.load(Ordering::SeqCst),
            delivered: self.counters.delivered.load(Ordering::SeqCst),
            failed: self.counters.failed.load(Ordering::SeqCst),
        }
    }

    pub fn pending(&self) -> u64 {
        self.counters.pending.load(Ordering::SeqCst)
    }

    /// Waits until every emitted event was attempted. Returns false on timeout.
    pub async fn flush(&self, timeout: Duration) -> bool {
        let wait = async {
            loop {
                let notified = self.idle.notified();
                if self.pending() == 0 {
                    return;
                }
                notified.await;
            }
        };
        tokio::time::timeout(timeout, wait).await.is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ChatPayload, ChatSender, EventBody};
    use crate::events::pseudonym::CourseSalt;
    use crate::events::store::{EventStore, JsonlEventStore};
    use chrono::Utc;

    fn raw(text: &str) -> RawEvent {
        RawEvent {
            user_id: "u1".into(),
            lesson_id: "l1".into(),
            session_id: "session_u1_l1".into(),
            timestamp: Utc::now(),
            body: EventBody::ChatMessage(ChatPayload { sender: ChatSender::Student, text: text.into() }),
        }
    }

    #[tokio::test]
    async fn delivers_in_order() {
        let store = Arc::new(JsonlEventStore::in_memory());
        let ing = Arc::new(Ingestor::new(store.clone(), CourseSalt::new("0123456789abcdef").unwrap()));
        let emitter = EventEmitter::new(Arc::new(LocalSink(ing)));
        emitter.emit(vec![raw("first"), raw("second")]);
        assert!(emitter.flush(Duration::from_secs(5)).await);
        let texts: Vec<_> = store
            .read_lesson("l1")
            .unwrap()
            .into_iter()
            .map(|e| match e.body {
                EventBody::ChatMessage(p) => p.text,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(texts, vec!["first", "second"]);
        assert_eq!(emitter.stats(), EmitStats { attempted: 2, delivered: 2, failed: 0 });
    }

    #[tokio::test]
    async fn failures_are_counted_not_raised() {
        let emitter = EventEmitter::new(Arc::new(NullSink));
        emitter.emit(vec![raw("a"), raw("b")]);
        assert!(emitter.flush(Duration::from_secs(5)).await);
        assert_eq!(emitter.stats(), EmitStats { attempted: 2, delivered: 0, failed: 2 });
    }
}
