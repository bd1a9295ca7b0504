//! Lesson bundles: the only place lesson-specific content enters the system.
//!
//! A bundle is one JSON document. It is fully validated at load time; a
//! bundle that fails validation is never served.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::check_slug;

/// Agents that must have a lesson instruction entry.
pub const REQUIRED_INSTRUCTIONS: [&str; 5] = ["video", "guidance", "code", "synthesizer", "autograder"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LessonContent {
    pub lesson_id: String,
    pub title: String,
    pub objectives: Vec<String>,
    pub editor_language: String,
    pub transcript: Vec<TranscriptSegment>,
    #[serde(default)]
    pub video_outline: Vec<OutlineEntry>,
    pub cells: Vec<Cell>,
    pub checkpoints: Vec<Checkpoint>,
    pub agent_instructions: BTreeMap<String, String>,
    #[serde(default)]
    pub error_catalog: Vec<ErrorCatalogEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlineEntry {
    pub start_s: f64,
    pub end_s: f64,
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Markdown,
    Code,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub cell_id: String,
    pub kind: CellKind,
    pub editable: bool,
    #[serde(default)]
    pub initial_source: String,
}

/// Grading instructions always carry both halves of the pass rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradingInstructions {
    pub output_criteria: String,
    pub approach_criteria: String,
}

impl GradingInstructions {
    pub fn render(&self) -> String {
        format!(
            "Output criteria: {}\nApproach criteria: {}\nBoth must be met to pass.",
            self.output_criteria.trim(),
            self.approach_criteria.trim()
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub checkpoint_id: String,
    pub title: String,
    pub target_cells: Vec<String>,
    pub grading_instructions: GradingInstructions,
    /// Lecture span this checkpoint assesses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_window: Option<TimeWindow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorCatalogEntry {
    pub pattern: String,
    pub explanation: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LessonViolation {
    InvalidLessonId(String),
    DuplicateCell(String),
    DuplicateCheckpoint(String),
    EmptyTargets(String),
    UnknownTargetCell { checkpoint: String, cell: String },
    NonEditableTarget { checkpoint: String, cell: String },
    BadSegment(usize),
    OverlappingSegments(usize, usize),
    BadOutlineEntry(usize),
    BadWindow(String),
    MissingInstructions(&'static str),
    EmptyGradingInstructions(String),
    NoCheckpoints,
}

impl fmt::Display for LessonViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use LessonViolation::*;
        match self {
            InvalidLessonId(id) => write!(f, "lesson id `{id}` is not a URL-safe slug without underscores"),
            DuplicateCell(id) => write!(f, "cell `{id}` declared more than once"),
            DuplicateCheckpoint(id) => write!(f, "checkpoint `{id}` declared more than once"),
            EmptyTargets(cp) => write!(f, "checkpoint `{cp}` has no target cells"),
            UnknownTargetCell { checkpoint, cell } => {
                write!(f, "checkpoint `{checkpoint}` targets unknown cell `{cell}`")
            }
            NonEditableTarget { checkpoint, cell } => {
                write!(f, "checkpoint `{checkpoint}` targets `{cell}`, which is not an editable code cell")
            }
            BadSegment(i) => write!(f, "transcript segment {i} must satisfy 0 <= start_s < end_s"),
            OverlappingSegments(a, b) => write!(f, "transcript segments {a} and {b} overlap or are out of order"),
            BadOutlineEntry(i) => write!(f, "video outline entry {i} must satisfy 0 <= start_s < end_s"),
            BadWindow(cp) => write!(f, "checkpoint `{cp}` has an empty or negative transcript window"),
            MissingInstructions(agent) => write!(f, "agent_instructions lacks an entry for `{agent}`"),
            EmptyGradingInstructions(cp) => {
                write!(f, "checkpoint `{cp}` must state both output and approach criteria")
            }
            NoCheckpoints => f.write_str("lesson declares no checkpoints"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LessonError {
    #[error("cannot read lesson bundle {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("lesson bundle does not parse at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("lesson bundle failed validation: {}", join(.0))]
    Validation(Vec<LessonViolation>),
    #[error("unknown checkpoint `{0}`")]
    UnknownCheckpoint(String),
    #[error("duplicate lesson id `{0}` in catalog")]
    DuplicateLesson(String),
}

fn join(v: &[LessonViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl LessonContent {
    /// Parses and validates a bundle from its bytes.
    pub fn from_json(bytes: &[u8]) -> Result<Self, LessonError> {
        let lesson: LessonContent = serde_json::from_slice(bytes).map_err(|e| LessonError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let violations = lesson.violations();
        if violations.is_empty() {
            Ok(lesson)
        } else {
            Err(LessonError::Validation(violations))
        }
    }

    pub fn violations(&self) -> Vec<LessonViolation> {
        let mut out = Vec::new();
        if check_slug(&self.lesson_id).is_err() {
            out.push(LessonViolation::InvalidLessonId(self.lesson_id.clone()));
        }

        let mut cells = BTreeMap::new();
        for cell in &self.cells {
            if cells.insert(cell.cell_id.as_str(), cell).is_some() {
                out.push(LessonViolation::DuplicateCell(cell.cell_id.clone()));
            }
        }

        if self.checkpoints.is_empty() {
            out.push(LessonViolation::NoCheckpoints);
        }
        let mut seen = BTreeSet::new();
        for cp in &self.checkpoints {
            if !seen.insert(cp.checkpoint_id.as_str()) {
                out.push(LessonViolation::DuplicateCheckpoint(cp.checkpoint_id.clone()));
            }
            if cp.target_cells.is_empty() {
                out.push(LessonViolation::EmptyTargets(cp.checkpoint_id.clone()));
            }
            for target in &cp.target_cells {
                match cells.get(target.as_str()) {
                    None => out.push(LessonViolation::UnknownTargetCell {
                        checkpoint: cp.checkpoint_id.clone(),
                        cell: target.clone(),
                    }),
                    Some(cell) if cell.kind != CellKind::Code || !cell.editable => {
                        out.push(LessonViolation::NonEditableTarget {
                            checkpoint: cp.checkpoint_id.clone(),
                            cell: target.clone(),
                        })
                    }
                    Some(_) => {}
                }
            }
            if cp.grading_instructions.output_criteria.trim().is_empty()
                || cp.grading_instructions.approach_criteria.trim().is_empty()
            {
                out.push(LessonViolation::EmptyGradingInstructions(cp.checkpoint_id.clone()));
            }
            if let Some(w) = cp.transcript_window {
                if !(w.start_s >= 0.0 && w.start_s < w.end_s) {
                    out.push(LessonViolation::BadWindow(cp.checkpoint_id.clone()));
                }
            }
        }

        for (i, seg) in self.transcript.iter().enumerate() {
            if !(seg.start_s >= 0.0 && seg.start_s < seg.end_s) {
                out.push(LessonViolation::BadSegment(i));
            }
        }
        for (i, pair) in self.transcript.windows(2).enumerate() {
            if pair[1].start_s < pair[0].end_s {
                out.push(LessonViolation::OverlappingSegments(i, i + 1));
            }
        }
        for (i, entry) in self.video_outline.iter().enumerate() {
            if !(entry.start_s >= 0.0 && entry.start_s < entry.end_s) {
                out.push(LessonViolation::BadOutlineEntry(i));
            }
        }

        for agent in REQUIRED_INSTRUCTIONS {
            if self.agent_instructions.get(agent).is_none_or(|t| t.trim().is_empty()) {
                out.push(LessonViolation::MissingInstructions(agent));
            }
        }
        out
    }

    pub fn cell(&self, cell_id: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.cell_id == cell_id)
    }

    pub fn checkpoint(&self, checkpoint_id: &str) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.checkpoint_id == checkpoint_id)
    }

    pub fn editable_cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.editable && c.kind == CellKind::Code)
    }

    pub fn instructions(&self, agent: &str) -> &str {
        self.agent_instructions.get(agent).map(String::as_str).unwrap_or("")
    }

    /// Transcript segments assessed by `checkpoint_id`.
    ///
    /// A segment is included when it overlaps the checkpoint's window by a
    /// positive amount. Without a declared window the full transcript is
    /// returned; a window past the transcript end yields an empty list.
    pub fn transcript_window(&self, checkpoint_id: &str) -> Result<Vec<&TranscriptSegment>, LessonError> {
        let cp = self
            .checkpoint(checkpoint_id)
            .ok_or_else(|| LessonError::UnknownCheckpoint(checkpoint_id.to_string()))?;
        Ok(match cp.transcript_window {
            None => self.transcript.iter().collect(),
            Some(w) => self
                .transcript
                .iter()
                .filter(|s| s.start_s < w.end_s && s.end_s > w.start_s)
                .collect(),
        })
    }

    /// Length of the lecture as declared by the outline or transcript.
    pub fn video_length_s(&self) -> f64 {
        let outline = self.video_outline.iter().map(|e| e.end_s);
        let transcript = self.transcript.iter().map(|s| s.end_s);
        outline.chain(transcript).fold(0.0, f64::max)
    }
}

/// Reads and validates the bundle at `path`.
pub fn load_lesson(path: impl AsRef<Path>) -> Result<LessonContent, LessonError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| LessonError::Io { path: path.to_path_buf(), source })?;
    LessonContent::from_json(&bytes)
}

/// All lessons served by one deployment, loaded once and shared read-only.
#[derive(Clone, Debug, Default)]
pub struct LessonCatalog {
    lessons: BTreeMap<String, LessonContent>,
}

impl LessonCatalog {
    pub fn new(lessons: impl IntoIterator<Item = LessonContent>) -> Result<Self, LessonError> {
        let mut map = BTreeMap::new();
        for lesson in lessons {
            let id = lesson.lesson_id.clone();
            if map.insert(id.clone(), lesson).is_some() {
                return Err(LessonError::DuplicateLesson(id));
            }
        }
        Ok(LessonCatalog { lessons: map })
    }

    /// Loads every `*.json` bundle in `dir`, failing on the first invalid one.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, LessonError> {
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|source| LessonError::Io { path: dir.to_path_buf(), source })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let lessons = paths.iter().map(load_lesson).collect::<Result<Vec<_>, _>>()?;
        LessonCatalog::new(lessons)
    }

    pub fn get(&self, lesson_id: &str) -> Option<&LessonContent> {
        self.lessons.get(lesson_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.lessons.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.lessons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lessons.is_empty()
    }
}
