//! Run reports and their tabular rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use wheelhouse_core::domain::{EventCategory, TurnTiming};

use crate::scenario::ExpectedCounts;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub student: usize,
    pub step: usize,
    pub status: u16,
    pub well_formed: bool,
    pub fallback: bool,
    /// Specialists reported unavailable for the turn.
    pub unavailable: usize,
    pub timing: Option<TurnTiming>,
    pub client_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub student: usize,
    pub step: usize,
    pub checkpoint_id: String,
    pub status: u16,
    pub passed: Option<bool>,
    pub short_circuit: bool,
    pub reasoning: String,
    pub expected: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Count,
    Request,
    Grade,
    Unreachable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub kind: DivergenceKind,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub template: String,
    pub seed: u64,
    pub lesson_id: String,
    pub students: usize,
    pub actions: usize,
    pub backend: String,
    pub expected: ExpectedCounts,
    /// Store delta observed after the run; absent when counts were not checked.
    pub achieved: Option<ExpectedCounts>,
    pub turns: Vec<TurnRecord>,
    pub grades: Vec<GradeRecord>,
    pub requests_failed: u64,
    pub divergences: Vec<Divergence>,
    pub actions_ms: u64,
    pub elapsed_ms: u64,
}

pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn label(c: EventCategory) -> &'static str {
    match c {
        EventCategory::VideoPlayback => "Video playback",
        EventCategory::ChatMessage => "Chat messages",
        EventCategory::CodeExecution => "Code executions",
        EventCategory::CodeEditor => "Code editor",
        EventCategory::SessionManagement => "Session management",
        EventCategory::CheckpointEvaluation => "Checkpoint evaluations",
        EventCategory::Error => "Errors",
        EventCategory::Other => "Other",
    }
}

/// Per-category table of expected and stored counts.
pub fn render_table(report: &RunReport) -> String {
    let achieved = report.achieved.as_ref();
    let cell = |n: Option<u64>| n.map(thousands).unwrap_or_else(|| "-".into());
    let mut rows: Vec<(String, String, String)> = EventCategory::ALL
        .into_iter()
        .map(|c| (label(c).to_string(), thousands(report.expected.count(c)), cell(achieved.map(|a| a.count(c)))))
        .collect();
    rows.push(("Total".into(), thousands(report.expected.total), cell(achieved.map(|a| a.total))));
    let pct = |c: Option<&ExpectedCounts>| c.and_then(ExpectedCounts::success_rate_pct).map(|p| format!("{p}%")).unwrap_or("-".into());
    rows.push(("Execution success rate".into(), pct(Some(&report.expected)), pct(achieved)));

    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Category".len());
    let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max("Expected".len());
    let w2 = rows.iter().map(|r| r.2.len()).max().unwrap_or(0).max("Stored".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} seed {} on {}: {} students, {} actions, backend {}",
        report.template, report.seed, report.lesson_id, report.students, report.actions, report.backend
    );
    let _ = writeln!(out, "{:<w0$}  {:>w1$}  {:>w2$}", "Category", "Expected", "Stored");
    let _ = writeln!(out, "{}", "-".repeat(w0 + w1 + w2 + 4));
    for (a, b, c) in &rows {
        let _ = writeln!(out, "{a:<w0$}  {b:>w1$}  {c:>w2$}");
    }
    let _ = writeln!(out, "elapsed {:.1} s, {} failed requests", report.elapsed_ms as f64 / 1000.0, report.requests_failed);
    if report.divergences.is_empty() {
        let _ = writeln!(out, "no divergences");
    } else {
        let _ = writeln!(out, "{} divergences:", report.divergences.len());
        for d in &report.divergences {
            let _ = writeln!(out, "  {:?}: {}", d.kind, d.detail);
        }
    }
    out
}
