//! Scenario files: a roster, one ordered script per student, and the event
//! counts the script is expected to leave in the store.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use wheelhouse_core::domain::{EventCategory, VideoAction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub template: String,
    pub seed: u64,
    pub lesson_id: String,
    pub roster: Vec<String>,
    pub students: Vec<StudentScript>,
    pub expected: ExpectedCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentScript {
    pub user_id: String,
    pub actions: Vec<TimedAction>,
}

/// One action at a virtual offset, in seconds, from the start of class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub at_s: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    /// Opens (or reopens) the session and reports a session start.
    StartSession,
    EndSession,
    Video {
        action: VideoAction,
        position_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seek_from_s: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seek_to_s: Option<f64>,
    },
    Edit {
        cell_id: String,
        source: String,
    },
    /// Reports a run result; the output stands in for the execution service.
    Execute {
        cell_id: String,
        output: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Chat {
        message: String,
    },
    Submit {
        checkpoint_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect_passed: Option<bool>,
    },
    /// A frontend-side failure reported as an error event.
    ClientError {
        message: String,
    },
    /// Frontend activity outside the reported categories.
    Other {
        kind: String,
    },
}

impl Action {
    pub fn video_play(position_s: f64) -> Self {
        Action::Video { action: VideoAction::Play, position_s, seek_from_s: None, seek_to_s: None }
    }

    pub fn video_pause(position_s: f64) -> Self {
        Action::Video { action: VideoAction::Pause, position_s, seek_from_s: None, seek_to_s: None }
    }

    pub fn video_seek(from_s: f64, to_s: f64) -> Self {
        Action::Video { action: VideoAction::Seek, position_s: to_s, seek_from_s: Some(from_s), seek_to_s: Some(to_s) }
    }

    /// Events this action leaves in the store when every call succeeds.
    pub fn expected_events(&self) -> (EventCategory, u64) {
        match self {
            Action::StartSession | Action::EndSession => (EventCategory::SessionManagement, 1),
            Action::Video { .. } => (EventCategory::VideoPlayback, 1),
            Action::Edit { .. } => (EventCategory::CodeEditor, 1),
            Action::Execute { .. } => (EventCategory::CodeExecution, 1),
            // Student message plus tutor reply.
            Action::Chat { .. } => (EventCategory::ChatMessage, 2),
            Action::Submit { .. } => (EventCategory::CheckpointEvaluation, 1),
            Action::ClientError { .. } => (EventCategory::Error, 1),
            Action::Other { .. } => (EventCategory::Other, 1),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    /// Every category, zero-filled.
    pub counts: BTreeMap<EventCategory, u64>,
    pub total: u64,
    pub code_executions_succeeded: u64,
}

impl ExpectedCounts {
    pub fn zero() -> Self {
        ExpectedCounts { counts: EventCategory::ALL.into_iter().map(|c| (c, 0)).collect(), total: 0, code_executions_succeeded: 0 }
    }

    pub fn from_counts(counts: &[(EventCategory, u64)], succeeded: u64) -> Self {
        let mut out = Self::zero();
        for &(c, n) in counts {
            *out.counts.get_mut(&c).expect("zero-filled") += n;
        }
        out.total = out.counts.values().sum();
        out.code_executions_succeeded = succeeded;
        out
    }

    pub fn count(&self, category: EventCategory) -> u64 {
        self.counts.get(&category).copied().unwrap_or(0)
    }

    /// Successful share of code executions as a whole percentage.
    pub fn success_rate_pct(&self) -> Option<u64> {
        let n = self.count(EventCategory::CodeExecution);
        (n > 0).then(|| (100.0 * self.code_executions_succeeded as f64 / n as f64).round() as u64)
    }
}

/// Counts implied by a list of actions.
pub fn count_actions<'a>(actions: impl IntoIterator<Item = &'a Action>) -> ExpectedCounts {
    let mut out = ExpectedCounts::zero();
    for action in actions {
        let (category, n) = action.expected_events();
        *out.counts.get_mut(&category).expect("zero-filled") += n;
        out.total += n;
        if let Action::Execute { error: None, .. } = action {
            out.code_executions_succeeded += 1;
        }
    }
    out
}

impl Scenario {
    /// Counts implied by every student's script.
    pub fn derived_counts(&self) -> ExpectedCounts {
        count_actions(self.students.iter().flat_map(|s| s.actions.iter().map(|a| &a.action)))
    }

    pub fn action_count(&self) -> usize {
        self.students.iter().map(|s| s.actions.len()).sum()
    }

    /// Splits every script at its midpoint.
    pub fn halves(&self) -> (Scenario, Scenario) {
        let mut first = self.clone();
        let mut second = self.clone();
        for (a, b) in first.students.iter_mut().zip(second.students.iter_mut()) {
            let mid = a.actions.len() / 2;
            a.actions.truncate(mid);
            b.actions.drain(..mid);
        }
        first.expected = first.derived_counts();
        second.expected = second.derived_counts();
        (first, second)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
