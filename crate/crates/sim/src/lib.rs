//! Classroom simulator: generates seeded student scripts and replays them
//! against running services.

pub mod generate;
pub mod replay;
pub mod report;
pub mod scenario;

pub use generate::{generate, UnknownTemplate, TEMPLATES};
pub use replay::{replay, Endpoints, ReplayError, ReplayOptions};
pub use report::{render_table, RunReport};
pub use scenario::{Action, ExpectedCounts, Scenario, StudentScript, TimedAction};
