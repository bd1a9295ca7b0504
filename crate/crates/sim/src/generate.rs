//! Scenario templates. Every template is a pure function of its seed.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wheelhouse_core::domain::EventCategory;

use crate::scenario::{Action, ExpectedCounts, Scenario, StudentScript, TimedAction};

pub const TEMPLATES: [&str; 3] = ["table1", "deadzone", "confusion"];

#[derive(Debug, thiserror::Error)]
#[error("unknown template `{0}` (known: table1, deadzone, confusion)")]
pub struct UnknownTemplate(pub String);

/// Pilot-course volumes per category.
pub const TABLE1_COUNTS: [(EventCategory, u64); 8] = [
    (EventCategory::VideoPlayback, 7666),
    (EventCategory::ChatMessage, 334),
    (EventCategory::CodeExecution, 387),
    (EventCategory::CodeEditor, 147),
    (EventCategory::SessionManagement, 124),
    (EventCategory::CheckpointEvaluation, 32),
    (EventCategory::Error, 208),
    (EventCategory::Other, 1730),
];
pub const TABLE1_SUCCEEDED: u64 = 298;
pub const TABLE1_TOTAL: u64 = 10_628;
pub const TABLE1_STUDENTS: usize = 20;

pub fn generate(template: &str, seed: u64) -> Result<Scenario, UnknownTemplate> {
    match template {
        "table1" => Ok(table1(seed)),
        "deadzone" => Ok(deadzone(seed)),
        "confusion" => Ok(confusion(seed)),
        other => Err(UnknownTemplate(other.to_string())),
    }
}

fn rng(template: &str, seed: u64) -> ChaCha8Rng {
    // Distinct streams per template for the same seed.
    let salt = template.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

const M1_VIDEO_S: f64 = 1620.0;
const M1_SCAFFOLD_C2: &str =
    "from qiskit import QuantumCircuit\n# Build a one-qubit circuit named circuit and put the qubit in superposition\n";
const M1_SCAFFOLD_C5: &str = "import numpy as np\nH = np.array([[1, 1], [1, -1]]) / np.sqrt(2)\nket0 = np.array([1, 0])\n# Compute the state H applied to ket0 and store it in state\n";

const QUESTIONS: [&str; 8] = [
    "What does the Hadamard gate do to |0>?",
    "Why are my counts not exactly 50/50?",
    "How do I read the measurement result?",
    "Is the order of the matrix product important here?",
    "What is a relative phase?",
    "Why does Z change nothing before the final Hadamard?",
    "How many shots should I use?",
    "Can you explain the difference between a state and a measurement?",
];

const EDITS: [(&str, &str); 8] = [
    ("c2", "circuit = QuantumCircuit(1)\ncircuit.h(0)\n"),
    ("c2", "circuit = QuantumCircuit(1)\n"),
    ("c3", "sampler = StatevectorSampler()\ncircuit.measure_all()\nprint(sampler.run([circuit], shots=1024).result()[0].data.meas.get_counts())\n"),
    ("c3", "sampler = StatevectorSampler()\nprint(sampler.run([circuit]).result())\n"),
    ("c5", "state = H @ ket0\nprint(state)\n"),
    ("c5", "state = np.dot(H, ket0)\nprint(state)\n"),
    ("c6", "qc = QuantumCircuit(1)\nqc.h(0)\nqc.z(0)\nqc.h(0)\n"),
    ("c6", "qc = QuantumCircuit(1)\nqc.z(0)\n"),
];

const OUTPUTS: [(&str, &str); 4] = [
    ("c2", ""),
    ("c3", "{'0': 509, '1': 515}\n"),
    ("c5", "[0.70710678 0.70710678]\n"),
    ("c6", "{'1': 1024}\n"),
];

const FAILURES: [(&str, &str); 4] = [
    ("c2", "NameError: name 'circuit' is not defined"),
    ("c3", "QiskitError: 'No counts for experiment \"0\"'"),
    ("c5", "ValueError: operands could not be broadcast together with shapes (2,2) (3,)"),
    ("c6", "TypeError: Statevector input must be a circuit or a vector"),
];

const CLIENT_ERRORS: [&str; 4] = [
    "video player: buffering stalled",
    "editor: autosave request failed",
    "chat panel: response rendering failed",
    "notebook: cell output too large to display",
];

const OTHER_KINDS: [&str; 5] = ["page_view", "tab_hidden", "tab_visible", "outline_opened", "transcript_opened"];

fn place<T>(rng: &mut ChaCha8Rng, sessions: &mut [Vec<T>], items: impl IntoIterator<Item = T>) {
    for item in items {
        let i = rng.random_range(0..sessions.len());
        sessions[i].push(item);
    }
}

enum Slot {
    Video,
    Chat,
    Edit,
    Execute(bool),
    Submit,
    ClientError,
    Other,
}

/// Course-wide volumes spread over 20 students and 62 sittings.
fn table1(seed: u64) -> Scenario {
    let mut rng = rng("table1", seed);
    let count = |c: EventCategory| TABLE1_COUNTS.iter().find(|(k, _)| *k == c).map(|(_, n)| *n).unwrap();
    let roster: Vec<String> = (1..=TABLE1_STUDENTS).map(|i| format!("t1-learner-{i:02}")).collect();

    // Each sitting contributes a start and an end event.
    let sittings = (count(EventCategory::SessionManagement) / 2) as usize;
    let mut owner: Vec<usize> = (0..roster.len()).collect();
    owner.extend((roster.len()..sittings).map(|_| rng.random_range(0..roster.len())));
    owner.sort_unstable();

    let mut slots: Vec<Vec<Slot>> = (0..sittings).map(|_| Vec::new()).collect();
    let executions = count(EventCategory::CodeExecution);
    place(&mut rng, &mut slots, (0..count(EventCategory::VideoPlayback)).map(|_| Slot::Video));
    place(&mut rng, &mut slots, (0..count(EventCategory::ChatMessage) / 2).map(|_| Slot::Chat));
    place(&mut rng, &mut slots, (0..count(EventCategory::CodeEditor)).map(|_| Slot::Edit));
    place(&mut rng, &mut slots, (0..TABLE1_SUCCEEDED).map(|_| Slot::Execute(true)));
    place(&mut rng, &mut slots, (0..executions - TABLE1_SUCCEEDED).map(|_| Slot::Execute(false)));
    place(&mut rng, &mut slots, (0..count(EventCategory::CheckpointEvaluation)).map(|_| Slot::Submit));
    place(&mut rng, &mut slots, (0..count(EventCategory::Error)).map(|_| Slot::ClientError));
    place(&mut rng, &mut slots, (0..count(EventCategory::Other)).map(|_| Slot::Other));

    let mut students: Vec<StudentScript> =
        roster.iter().map(|u| StudentScript { user_id: u.clone(), actions: Vec::new() }).collect();
    let mut sitting_index = vec![0u64; roster.len()];
    for (sitting, items) in slots.into_iter().enumerate() {
        let who = owner[sitting];
        let base = sitting_index[who] * 2 * 86_400 + rng.random_range(0..3_600);
        sitting_index[who] += 1;
        let mut timed: Vec<(u64, Slot)> = items.into_iter().map(|s| (rng.random_range(10..3_590), s)).collect();
        timed.sort_by_key(|(t, _)| *t);

        let actions = &mut students[who].actions;
        actions.push(TimedAction { at_s: base, action: Action::StartSession });
        let mut position = rng.random_range(0.0..M1_VIDEO_S / 2.0).round();
        let mut playing = false;
        for (t, slot) in timed {
            let action = match slot {
                Slot::Video => {
                    if rng.random_bool(0.15) {
                        let to = (position + rng.random_range(-180.0..120.0)).clamp(0.0, M1_VIDEO_S).round();
                        let a = Action::video_seek(position, to);
                        position = to;
                        a
                    } else {
                        playing = !playing;
                        if playing {
                            Action::video_play(position)
                        } else {
                            position = (position + rng.random_range(5.0..120.0)).min(M1_VIDEO_S).round();
                            Action::video_pause(position)
                        }
                    }
                }
                Slot::Chat => Action::Chat { message: QUESTIONS.choose(&mut rng).unwrap().to_string() },
                Slot::Edit => {
                    let (cell, body) = EDITS.choose(&mut rng).unwrap();
                    let scaffold = match *cell {
                        "c2" => M1_SCAFFOLD_C2,
                        "c5" => M1_SCAFFOLD_C5,
                        _ => "",
                    };
                    Action::Edit { cell_id: cell.to_string(), source: format!("{scaffold}{body}") }
                }
                Slot::Execute(true) => {
                    let (cell, out) = OUTPUTS.choose(&mut rng).unwrap();
                    Action::Execute { cell_id: cell.to_string(), output: out.to_string(), error: None }
                }
                Slot::Execute(false) => {
                    let (cell, err) = FAILURES.choose(&mut rng).unwrap();
                    Action::Execute { cell_id: cell.to_string(), output: String::new(), error: Some(err.to_string()) }
                }
                Slot::Submit => {
                    Action::Submit { checkpoint_id: format!("cp{}", rng.random_range(1..=4)), expect_passed: None }
                }
                Slot::ClientError => Action::ClientError { message: CLIENT_ERRORS.choose(&mut rng).unwrap().to_string() },
                Slot::Other => Action::Other { kind: OTHER_KINDS.choose(&mut rng).unwrap().to_string() },
            };
            actions.push(TimedAction { at_s: base + t, action });
        }
        actions.push(TimedAction { at_s: base + 3_600, action: Action::EndSession });
    }

    Scenario {
        template: "table1".into(),
        seed,
        lesson_id: "qis-m1".into(),
        roster,
        students,
        expected: ExpectedCounts::from_counts(&TABLE1_COUNTS, TABLE1_SUCCEEDED),
    }
}

/// Band, in seconds, where the drop-off cluster sits.
pub const DEADZONE_BAND_S: (u64, u64) = (2_400, 2_639);
pub const DEADZONE_DROPOUTS: usize = 3;

const M2_EDITS: [(&str, &str, &str, &str); 4] = [
    ("c2", "cp1", "import numpy as np\nket01 = np.kron([1, 0], [0, 1])\nprint(ket01)\n", "[0 1 0 0]\n"),
    (
        "c3",
        "cp2",
        "from qiskit import QuantumCircuit\nqc = QuantumCircuit(2)\nqc.cx(0, 1)\n",
        "",
    ),
    (
        "c4",
        "cp3",
        "from qiskit.primitives import StatevectorSampler\nqc = QuantumCircuit(2)\nqc.x(0)\nqc.cx(0, 1)\nqc.measure_all()\nprint(StatevectorSampler().run([qc]).result()[0].data.meas.get_counts())\n",
        "{'11': 1024}\n",
    ),
    ("c5", "cp4", "print(qc.draw())\n", "q_0: --*--\n       |  \nq_1: --X--\n"),
];

/// Five students on the 75-minute lecture; three stop in the 40-44 minute
/// band after seeking back and forth, two watch to the end.
fn deadzone(seed: u64) -> Scenario {
    let mut rng = rng("deadzone", seed);
    let roster: Vec<String> = (1..=5).map(|i| format!("dz-learner-{i:02}")).collect();
    let mut students = Vec::new();
    for (i, user) in roster.iter().enumerate() {
        let drops = i < DEADZONE_DROPOUTS;
        let mut actions = vec![TimedAction { at_s: 0, action: Action::StartSession }];
        // Seeking back rewinds the video, not the clock.
        let mut clock = 0;
        let mut push = |at: f64, action: Action| {
            clock = (at as u64 + 5).max(clock + 1);
            actions.push(TimedAction { at_s: clock, action });
        };
        push(0.0, Action::video_play(0.0));

        // Steady viewing with pauses, with code work at each checkpoint.
        let stop = if drops { 2_400.0 } else { 4_500.0 };
        let mut position = 0.0;
        let mut pending = M2_EDITS.iter().peekable();
        while position < stop {
            position = (position + rng.random_range(150.0_f64..330.0)).min(stop).round();
            if position >= stop {
                break;
            }
            push(position, Action::video_pause(position));
            while let Some((cell, cp, source, output)) = pending.next_if(|e| cp_window_end(e.1) <= position) {
                push(position, Action::Edit { cell_id: cell.to_string(), source: source.to_string() });
                push(position, Action::Execute { cell_id: cell.to_string(), output: output.to_string(), error: None });
                push(position, Action::Submit { checkpoint_id: cp.to_string(), expect_passed: Some(true) });
            }
            push(position, Action::video_play(position));
        }

        if drops {
            let (lo, hi) = (DEADZONE_BAND_S.0 as f64, DEADZONE_BAND_S.1 as f64);
            push(lo, Action::video_play(lo));
            for _ in 0..3 {
                let from = rng.random_range(lo + 60.0..=hi).round();
                let to = rng.random_range(lo..=from - 30.0).round();
                push(from, Action::video_seek(from, to));
                push(to, Action::video_play(to));
            }
            let last = rng.random_range(lo + 120.0..=hi).round();
            push(last, Action::Chat { message: "I don't follow how two qubits become one state here.".into() });
            push(last, Action::video_pause(last));
            push(last + 60.0, Action::EndSession);
        } else {
            for (cell, cp, source, output) in pending {
                push(4_400.0, Action::Edit { cell_id: cell.to_string(), source: source.to_string() });
                push(4_400.0, Action::Execute { cell_id: cell.to_string(), output: output.to_string(), error: None });
                push(4_400.0, Action::Submit { checkpoint_id: cp.to_string(), expect_passed: Some(true) });
            }
            push(4_500.0, Action::video_pause(4_500.0));
            push(4_560.0, Action::EndSession);
        }
        students.push(StudentScript { user_id: user.clone(), actions });
    }
    let mut s = Scenario {
        template: "deadzone".into(),
        seed,
        lesson_id: "qis-m2".into(),
        roster,
        students,
        expected: ExpectedCounts::zero(),
    };
    s.expected = s.derived_counts();
    s
}

fn cp_window_end(cp: &str) -> f64 {
    match cp {
        "cp1" => 1_440.0,
        "cp2" => 2_040.0,
        "cp3" => 2_520.0,
        _ => 2_640.0,
    }
}

pub const CONFUSION_TYPO: &str = "circut = QuantumCircuit(1)\ncircuit.h(0)\n";
pub const CONFUSION_ELEMENTWISE: &str = "state = H * ket0\nprint(state)\n";

/// Cell, checkpoint, code, printed output, run error, expected grade.
type Plan = (&'static str, &'static str, &'static str, &'static str, Option<&'static str>, bool);

/// Two failing students with different kinds of mistakes, two passing.
fn confusion(seed: u64) -> Scenario {
    let mut rng = rng("confusion", seed);
    let roster: Vec<String> = (1..=4).map(|i| format!("cf-learner-{i:02}")).collect();
    let plans: [Plan; 4] = [
        ("c2", "cp1", CONFUSION_TYPO, "", Some("NameError: name 'circuit' is not defined"), false),
        ("c5", "cp3", CONFUSION_ELEMENTWISE, "[[ 0.70710678  0.        ]\n [ 0.70710678 -0.        ]]\n", None, false),
        ("c2", "cp1", "circuit = QuantumCircuit(1)\ncircuit.h(0)\n", "", None, true),
        ("c5", "cp3", "state = H @ ket0\nprint(state)\n", "[0.70710678 0.70710678]\n", None, true),
    ];
    let mut students = Vec::new();
    for (user, (cell, cp, body, output, error, passes)) in roster.iter().zip(plans) {
        let scaffold = if cell == "c2" { M1_SCAFFOLD_C2 } else { M1_SCAFFOLD_C5 };
        let (start, end) = if cp == "cp1" { (240.0, 420.0) } else { (780.0, 1_140.0) };
        let mut t = rng.random_range(0..120);
        let mut next = |step: u64| {
            t += step;
            t
        };
        let mut actions = vec![
            TimedAction { at_s: next(0), action: Action::StartSession },
            TimedAction { at_s: next(5), action: Action::video_play(start) },
        ];
        // A few pauses while watching the section.
        let mut position: f64 = start;
        for _ in 0..rng.random_range(1..4) {
            position = (position + rng.random_range(20.0..60.0)).min(end).round();
            actions.push(TimedAction { at_s: next(40), action: Action::video_pause(position) });
            actions.push(TimedAction { at_s: next(10), action: Action::video_play(position) });
        }
        actions.push(TimedAction { at_s: next(30), action: Action::video_pause(end) });
        actions.push(TimedAction {
            at_s: next(60),
            action: Action::Edit { cell_id: cell.into(), source: format!("{scaffold}{body}") },
        });
        actions.push(TimedAction {
            at_s: next(5),
            action: Action::Execute { cell_id: cell.into(), output: output.into(), error: error.map(String::from) },
        });
        if !passes {
            actions.push(TimedAction { at_s: next(30), action: Action::Chat { message: "Why is my answer wrong?".into() } });
        }
        actions.push(TimedAction {
            at_s: next(30),
            action: Action::Submit { checkpoint_id: cp.into(), expect_passed: Some(passes) },
        });
        actions.push(TimedAction { at_s: next(60), action: Action::EndSession });
        students.push(StudentScript { user_id: user.clone(), actions });
    }
    let mut s = Scenario {
        template: "confusion".into(),
        seed,
        lesson_id: "qis-m1".into(),
        roster,
        students,
        expected: ExpectedCounts::zero(),
    };
    s.expected = s.derived_counts();
    s
}
