//! HTTP services over the tutoring core: teaching, autograde, events and
//! feedback, each on its own listener behind a shared bearer token.

pub mod app;
pub mod config;
pub mod error;
pub mod executor;
pub mod middleware;
pub mod routes;
pub mod sink;

pub use app::{App, RunningServer, ServerBuilder, StartupError};
pub use config::{GatewayConfig, Service};
