//! Configuration, drivers and verification for the `semiflow` command.

pub mod artifacts;
pub mod config;
pub mod converge;
pub mod error;
pub mod scenario;
pub mod verify;

pub use config::{Scenario, ScenarioConfig, ScenarioKind};
pub use error::{CliError, CliResult};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "SEMIFLOW_THREADS";
