//! Scenario loading and the pipelines behind the `openloop` command.

pub mod config;
pub mod pipeline;

pub use config::{ConfigError, ScenarioConfig};
pub use pipeline::{Context, Overrides, RunError, RunReport};
