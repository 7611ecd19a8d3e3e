//! Experiment harness for `grouse-core`: seeded trajectories, parallel
//! sweeps, bound tables and the property verification suites behind the
//! `grouse` command.

pub mod config;
pub mod error;
pub mod sweep;
pub mod table;
pub mod trajectory;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};

/// Single-line JSON for metadata headers.
pub(crate) fn compact_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data always serializes")
}
