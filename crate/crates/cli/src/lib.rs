//! Config-driven runner around `ergodic-core`: parses experiment files,
//! dispatches them, and writes CSV/JSON artifacts with a hashed manifest.

pub mod config;
pub mod listing;
pub mod output;
pub mod run;

pub use config::{load, parse, ConfigError, Experiment, ExperimentConfig};
pub use run::{execute, RunError, RunOutput};
