//! Tutoring pipeline core: shared records, lesson bundles, the model gateway,
//! the teaching and grading flows, session persistence, the pseudonymizing
//! event pipeline and the instructor feedback layer.

pub mod autograder;
pub mod domain;
pub mod events;
pub mod feedback;
pub mod gateway;
pub mod lesson;
pub mod session_store;
pub mod teaching;
