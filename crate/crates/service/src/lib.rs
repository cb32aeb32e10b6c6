//! Chat orchestration, the HTTP API and the `pkchat` command line.

pub mod api;
pub mod cli;
pub mod orchestrator;

pub use api::{router, AppState};
pub use orchestrator::{Orchestrator, Session, SwitchEvent, TokenOut, TurnResult};
