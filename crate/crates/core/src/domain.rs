//! Shared vocabulary: specialist reports, grade results, interaction events,
//! session state and turn timing.
//!
//! Every record that crosses a module boundary lives here. Report validation
//! is strict: unknown fields are rejected, every declared field must be a
//! non-empty string (or boolean, for `passed`) within the length cap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Default per-field character cap for specialist reports.
pub const DEFAULT_FIELD_CAP: usize = 1_000;

/// Literal used by agents to report "nothing to flag".
pub const NONE_SENTINEL: &str = "none";

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Video,
    Guidance,
    Code,
    Grade,
}

impl ReportKind {
    pub fn fields(self) -> &'static [FieldDef] {
        match self {
            ReportKind::Video => VideoReport::FIELDS,
            ReportKind::Guidance => GuidanceReport::FIELDS,
            ReportKind::Code => CodeReport::FIELDS,
            ReportKind::Grade => GradeResult::FIELDS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReportKind::Video => "video",
            ReportKind::Guidance => "guidance",
            ReportKind::Code => "code",
            ReportKind::Grade => "grade",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldType {
    Text,
    Bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldDef {
    pub name: &'static str,
    pub ty: FieldType,
}

const fn text(name: &'static str) -> FieldDef {
    FieldDef { name, ty: FieldType::Text }
}

/// A typed structured output with a fixed, closed field list.
pub trait Report: Serialize + DeserializeOwned + Clone + Send + 'static {
    const KIND: ReportKind;
    const FIELDS: &'static [FieldDef];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoReport {
    pub relevant_segment: String,
    pub key_insight: String,
    pub coverage_gap: String,
}

impl Report for VideoReport {
    const KIND: ReportKind = ReportKind::Video;
    const FIELDS: &'static [FieldDef] =
        &[text("relevant_segment"), text("key_insight"), text("coverage_gap")];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceReport {
    pub conceptual_gap: String,
    pub pedagogical_approach: String,
    pub misconception_flag: String,
}

impl Report for GuidanceReport {
    const KIND: ReportKind = ReportKind::Guidance;
    const FIELDS: &'static [FieldDef] = &[
        text("conceptual_gap"),
        text("pedagogical_approach"),
        text("misconception_flag"),
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeReport {
    pub diagnosis: String,
    pub correct_components: String,
    pub next_step: String,
    pub alternative_approach: String,
}

impl Report for CodeReport {
    const KIND: ReportKind = ReportKind::Code;
    const FIELDS: &'static [FieldDef] = &[
        text("diagnosis"),
        text("correct_components"),
        text("next_step"),
        text("alternative_approach"),
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeResult {
    pub passed: bool,
    pub reasoning: String,
}

impl Report for GradeResult {
    const KIND: ReportKind = ReportKind::Grade;
    const FIELDS: &'static [FieldDef] = &[
        FieldDef { name: "passed", ty: FieldType::Bool },
        text("reasoning"),
    ];
}

/// Any validated structured output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum StructuredOutput {
    Video(VideoReport),
    Guidance(GuidanceReport),
    Code(CodeReport),
    Grade(GradeResult),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", content = "field", rename_all = "snake_case")]
pub enum Violation {
    NotAnObject,
    NotJson(String),
    MissingField(String),
    EmptyField(String),
    UnknownField(String),
    FieldTooLong(String),
    WrongType(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotAnObject => write!(f, "response is not a JSON object"),
            Violation::NotJson(e) => write!(f, "response is not valid JSON ({e})"),
            Violation::MissingField(n) => write!(f, "missing field `{n}`"),
            Violation::EmptyField(n) => write!(f, "field `{n}` is empty"),
            Violation::UnknownField(n) => write!(f, "unknown field `{n}`"),
            Violation::FieldTooLong(n) => write!(f, "field `{n}` exceeds the length cap"),
            Violation::WrongType(n) => write!(f, "field `{n}` has the wrong type"),
        }
    }
}

/// Collects every violation of `raw` against the field list of `T`.
pub fn check_fields(fields: &[FieldDef], raw: &Value, cap: usize) -> Vec<Violation> {
    let Some(obj) = raw.as_object() else {
        return vec![Violation::NotAnObject];
    };
    let mut violations = Vec::new();
    for def in fields {
        match (obj.get(def.name), def.ty) {
            (None, _) | (Some(Value::Null), _) => {
                violations.push(Violation::MissingField(def.name.to_string()))
            }
            (Some(Value::String(s)), FieldType::Text) => {
                if s.trim().is_empty() {
                    violations.push(Violation::EmptyField(def.name.to_string()));
                } else if s.chars().count() > cap {
                    violations.push(Violation::FieldTooLong(def.name.to_string()));
                }
            }
            (Some(Value::Bool(_)), FieldType::Bool) => {}
            (Some(_), _) => violations.push(Violation::WrongType(def.name.to_string())),
        }
    }
    for key in obj.keys() {
        if !fields.iter().any(|d| d.name == key) {
            violations.push(Violation::UnknownField(key.clone()));
        }
    }
    violations
}

/// Validates `raw` as a report of type `T`.
pub fn validate_as<T: Report>(raw: &Value, cap: usize) -> Result<T, Vec<Violation>> {
    let violations = check_fields(T::FIELDS, raw, cap);
    if !violations.is_empty() {
        return Err(violations);
    }
    serde_json::from_value(raw.clone()).map_err(|e| vec![Violation::NotJson(e.to_string())])
}

/// Validates an untyped record against the schema of `kind`.
pub fn validate_report(kind: ReportKind, raw: &Value, cap: usize) -> Result<StructuredOutput, Vec<Violation>> {
    Ok(match kind {
        ReportKind::Video => StructuredOutput::Video(validate_as(raw, cap)?),
        ReportKind::Guidance => StructuredOutput::Guidance(validate_as(raw, cap)?),
        ReportKind::Code => StructuredOutput::Code(validate_as(raw, cap)?),
        ReportKind::Grade => StructuredOutput::Grade(validate_as(raw, cap)?),
    })
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    VideoPlayback,
    ChatMessage,
    CodeExecution,
    CodeEditor,
    SessionManagement,
    CheckpointEvaluation,
    Error,
    /// Frontend events outside the seven reported categories (navigation and
    /// similar). Counted in totals, never surfaced in lesson streams.
    Other,
}

impl EventCategory {
    pub const ALL: [EventCategory; 8] = [
        EventCategory::VideoPlayback,
        EventCategory::ChatMessage,
        EventCategory::CodeExecution,
        EventCategory::CodeEditor,
        EventCategory::SessionManagement,
        EventCategory::CheckpointEvaluation,
        EventCategory::Error,
        EventCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventCategory::VideoPlayback => "video_playback",
            EventCategory::ChatMessage => "chat_message",
            EventCategory::CodeExecution => "code_execution",
            EventCategory::CodeEditor => "code_editor",
            EventCategory::SessionManagement => "session_management",
            EventCategory::CheckpointEvaluation => "checkpoint_evaluation",
            EventCategory::Error => "error",
            EventCategory::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for EventCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadFieldKind {
    Text,
    Number,
    Bool,
    OneOf(&'static [&'static str]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PayloadField {
    pub name: &'static str,
    pub kind: PayloadFieldKind,
    pub required: bool,
    /// `(field, value)`: the field becomes required when `field == value`.
    pub required_when: Option<(&'static str, &'static str)>,
}

impl fmt::Display for PayloadField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)?;
        if let PayloadFieldKind::OneOf(values) = self.kind {
            write!(f, "∈{{{}}}", values.join(","))?;
        }
        if !self.required {
            f.write_str("?")?;
        }
        Ok(())
    }
}

const fn req(name: &'static str, kind: PayloadFieldKind) -> PayloadField {
    PayloadField { name, kind, required: true, required_when: None }
}

const fn opt(name: &'static str, kind: PayloadFieldKind) -> PayloadField {
    PayloadField { name, kind, required: false, required_when: None }
}

pub const VIDEO_ACTIONS: &[&str] = &["play", "pause", "seek"];
pub const CHAT_SENDERS: &[&str] = &["student", "ai"];
pub const SESSION_ACTIONS: &[&str] = &["start", "end"];

const VIDEO_FIELDS: &[PayloadField] = &[
    req("action", PayloadFieldKind::OneOf(VIDEO_ACTIONS)),
    req("position_s", PayloadFieldKind::Number),
    PayloadField {
        name: "seek_from_s",
        kind: PayloadFieldKind::Number,
        required: false,
        required_when: Some(("action", "seek")),
    },
    PayloadField {
        name: "seek_to_s",
        kind: PayloadFieldKind::Number,
        required: false,
        required_when: Some(("action", "seek")),
    },
];
const CHAT_FIELDS: &[PayloadField] = &[
    req("sender", PayloadFieldKind::OneOf(CHAT_SENDERS)),
    req("text", PayloadFieldKind::Text),
];
const EXECUTION_FIELDS: &[PayloadField] = &[
    req("cell_id", PayloadFieldKind::Text),
    req("success", PayloadFieldKind::Bool),
    opt("error_message", PayloadFieldKind::Text),
];
const EDITOR_FIELDS: &[PayloadField] = &[req("cell_id", PayloadFieldKind::Text)];
const SESSION_FIELDS: &[PayloadField] = &[req("action", PayloadFieldKind::OneOf(SESSION_ACTIONS))];
const CHECKPOINT_FIELDS: &[PayloadField] = &[
    req("checkpoint_id", PayloadFieldKind::Text),
    req("cell_id", PayloadFieldKind::Text),
    req("passed", PayloadFieldKind::Bool),
    req("reasoning", PayloadFieldKind::Text),
];
const ERROR_FIELDS: &[PayloadField] = &[
    req("source", PayloadFieldKind::Text),
    req("message", PayloadFieldKind::Text),
];
const OTHER_FIELDS: &[PayloadField] = &[req("kind", PayloadFieldKind::Text)];

/// The payload field list ingestion validates for `category`.
pub fn event_category_schema(category: EventCategory) -> &'static [PayloadField] {
    match category {
        EventCategory::VideoPlayback => VIDEO_FIELDS,
        EventCategory::ChatMessage => CHAT_FIELDS,
        EventCategory::CodeExecution => EXECUTION_FIELDS,
        EventCategory::CodeEditor => EDITOR_FIELDS,
        EventCategory::SessionManagement => SESSION_FIELDS,
        EventCategory::CheckpointEvaluation => CHECKPOINT_FIELDS,
        EventCategory::Error => ERROR_FIELDS,
        EventCategory::Other => OTHER_FIELDS,
    }
}

/// Names of payload fields that are missing, mistyped, or undeclared.
pub fn check_payload(category: EventCategory, payload: &Map<String, Value>) -> Vec<String> {
    let schema = event_category_schema(category);
    let mut bad = Vec::new();
    for field in schema {
        let required = field.required
            || field
                .required_when
                .is_some_and(|(k, v)| payload.get(k).and_then(Value::as_str) == Some(v));
        match payload.get(field.name) {
            None | Some(Value::Null) => {
                if required {
                    bad.push(field.name.to_string());
                }
            }
            Some(value) => {
                let ok = match field.kind {
                    PayloadFieldKind::Text => value.as_str().is_some_and(|s| !s.is_empty()),
                    PayloadFieldKind::Number => value.as_f64().is_some_and(f64::is_finite),
                    PayloadFieldKind::Bool => value.is_boolean(),
                    PayloadFieldKind::OneOf(allowed) => {
                        value.as_str().is_some_and(|s| allowed.contains(&s))
                    }
                };
                if !ok {
                    bad.push(field.name.to_string());
                }
            }
        }
    }
    for key in payload.keys() {
        if !schema.iter().any(|f| f.name == key) {
            bad.push(key.clone());
        }
    }
    bad
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoAction {
    Play,
    Pause,
    Seek,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatSender {
    Student,
    Ai,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionAction {
    Start,
    End,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoPayload {
    pub action: VideoAction,
    pub position_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seek_from_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seek_to_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatPayload {
    pub sender: ChatSender,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeExecutionPayload {
    pub cell_id: String,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeEditorPayload {
    pub cell_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionPayload {
    pub action: SessionAction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointPayload {
    pub checkpoint_id: String,
    pub cell_id: String,
    pub passed: bool,
    pub reasoning: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorPayload {
    pub source: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtherPayload {
    pub kind: String,
}

/// Category plus its payload; serialized as sibling `category` / `payload` keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "category", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    VideoPlayback(VideoPayload),
    ChatMessage(ChatPayload),
    CodeExecution(CodeExecutionPayload),
    CodeEditor(CodeEditorPayload),
    SessionManagement(SessionPayload),
    CheckpointEvaluation(CheckpointPayload),
    Error(ErrorPayload),
    Other(OtherPayload),
}

impl EventBody {
    pub fn category(&self) -> EventCategory {
        match self {
            EventBody::VideoPlayback(_) => EventCategory::VideoPlayback,
            EventBody::ChatMessage(_) => EventCategory::ChatMessage,
            EventBody::CodeExecution(_) => EventCategory::CodeExecution,
            EventBody::CodeEditor(_) => EventCategory::CodeEditor,
            EventBody::SessionManagement(_) => EventCategory::SessionManagement,
            EventBody::CheckpointEvaluation(_) => EventCategory::CheckpointEvaluation,
            EventBody::Error(_) => EventCategory::Error,
            EventBody::Other(_) => EventCategory::Other,
        }
    }
}

/// Server-assigned, strictly increasing event identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub u64);

/// UTC timestamps serialized as ISO-8601 with millisecond precision.
pub mod timestamp_millis {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn parse(s: &str) -> Option<DateTime<Utc>> {
        DateTime::parse_from_rfc3339(s).ok().map(|t| t.with_timezone(&Utc))
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).ok_or_else(|| serde::de::Error::custom(format!("invalid timestamp `{raw}`")))
    }
}

/// One pseudonymized student action as stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub event_id: EventId,
    pub pseudonym: Pseudonym,
    pub lesson_id: String,
    pub session_id: String,
    #[serde(with = "timestamp_millis")]
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl InteractionEvent {
    pub fn category(&self) -> EventCategory {
        self.body.category()
    }
}

/// Event as posted by clients: carries the raw `user_id`, which ingestion
/// replaces with a pseudonym before anything is written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub user_id: String,
    pub lesson_id: String,
    pub session_id: String,
    #[serde(with = "timestamp_millis")]
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Opaque student token: fixed-length lowercase hex.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pseudonym(String);

pub const PSEUDONYM_HEX_LEN: usize = 16;

impl Pseudonym {
    pub fn new(value: impl Into<String>) -> Result<Self, String> {
        let value = value.into();
        let ok = value.len() == PSEUDONYM_HEX_LEN
            && value.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if ok {
            Ok(Pseudonym(value))
        } else {
            Err(format!("`{value}` is not a {PSEUDONYM_HEX_LEN}-char lowercase hex pseudonym"))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Pseudonym {
    type Error = String;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Pseudonym::new(value)
    }
}

impl From<Pseudonym> for String {
    fn from(p: Pseudonym) -> Self {
        p.0
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid id `{0}`: ids must be non-empty URL-safe slugs without underscores")]
pub struct InvalidId(pub String);

/// Checks the slug rule shared by user ids and lesson ids.
pub fn check_slug(id: &str) -> Result<(), InvalidId> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '@' | '~'));
    if ok {
        Ok(())
    } else {
        Err(InvalidId(id.to_string()))
    }
}

/// Composite `session_{user_id}_{lesson_id}` key.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SessionKey {
    key: String,
    split: usize,
}

const SESSION_PREFIX: &str = "session_";

impl SessionKey {
    pub fn new(user_id: &str, lesson_id: &str) -> Result<Self, InvalidId> {
        check_slug(user_id)?;
        check_slug(lesson_id)?;
        Ok(SessionKey {
            key: format!("{SESSION_PREFIX}{user_id}_{lesson_id}"),
            split: SESSION_PREFIX.len() + user_id.len(),
        })
    }

    pub fn parse(raw: &str) -> Result<Self, InvalidId> {
        let rest = raw.strip_prefix(SESSION_PREFIX).ok_or_else(|| InvalidId(raw.to_string()))?;
        let (user, lesson) = rest.split_once('_').ok_or_else(|| InvalidId(raw.to_string()))?;
        SessionKey::new(user, lesson).map_err(|_| InvalidId(raw.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.key
    }

    pub fn user_id(&self) -> &str {
        &self.key[SESSION_PREFIX.len()..self.split]
    }

    pub fn lesson_id(&self) -> &str {
        &self.key[self.split + 1..]
    }
}

impl TryFrom<String> for SessionKey {
    type Error = InvalidId;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        SessionKey::parse(&value)
    }
}

impl From<SessionKey> for String {
    fn from(k: SessionKey) -> Self {
        k.key
    }
}

impl fmt::Display for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key)
    }
}

/// `session_key(user, lesson)`: exactly `"session_" + user + "_" + lesson`.
pub fn session_key(user_id: &str, lesson_id: &str) -> Result<SessionKey, InvalidId> {
    SessionKey::new(user_id, lesson_id)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    Student,
    Tutor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellOutput {
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_key: SessionKey,
    /// Editable cells only.
    pub cell_contents: BTreeMap<String, String>,
    #[serde(default)]
    pub cell_outputs: BTreeMap<String, CellOutput>,
    pub completed_checkpoints: BTreeSet<String>,
    pub chat_context: Vec<ChatTurn>,
}

impl SessionState {
    pub fn empty(session_key: SessionKey) -> Self {
        SessionState {
            session_key,
            cell_contents: BTreeMap::new(),
            cell_outputs: BTreeMap::new(),
            completed_checkpoints: BTreeSet::new(),
            chat_context: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

/// Default slack allowed above `max(specialists) + synth` under the scripted backend.
pub const DEFAULT_OVERHEAD_BUDGET_MS: u64 = 250;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnTiming {
    pub l_video: u64,
    pub l_guidance: u64,
    pub l_code: u64,
    pub l_synth: u64,
    pub wall: u64,
}

impl TurnTiming {
    pub fn parallel_phase(&self) -> u64 {
        self.l_video.max(self.l_guidance).max(self.l_code)
    }

    pub fn lower_bound(&self) -> u64 {
        self.parallel_phase() + self.l_synth
    }

    pub fn within_budget(&self, overhead_ms: u64) -> bool {
        self.wall >= self.lower_bound() && self.wall <= self.lower_bound() + overhead_ms
    }
}
