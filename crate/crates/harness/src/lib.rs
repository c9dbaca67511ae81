//! Configuration, orchestration and reporting around `pod2c`.
//!
//! The `pod2c` binary exposes four subcommands (`sysid-check`, `train`,
//! `synthesize`, `evaluate`) that read a TOML experiment file and write CSV,
//! SVG and artifact files to an output directory.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use pipeline::Experiment;
