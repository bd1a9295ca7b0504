//! Event pipeline: pseudonymizing ingestion, append-only storage, the fixed
//! per-lesson queries, and fire-and-forget emission.

pub mod emit;
pub mod ingest;
pub mod pseudonym;
pub mod queries;
pub mod store;

pub use emit::{EmitStats, EventEmitter, EventSink, LocalSink, NullSink, SinkError};
pub use ingest::{IngestError, Ingestor};
pub use pseudonym::{pseudonymize, pseudonymize_session, CourseSalt, SaltError};
pub use queries::{
    ChatEntry, CodeEntry, LessonQueries, LessonSnapshot, LessonStreams, SummaryBlock, VideoEntry,
    CHAT_TRUNCATION_CHARS,
};
pub use store::{EventStore, JsonlEventStore, NewEvent, StorageFailure};
