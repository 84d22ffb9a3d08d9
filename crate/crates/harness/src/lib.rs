//! Configuration, the staged command-line pipeline and report writing for
//! shortcut-probe runs.
//!
//! Stages: `inject` writes the corpora and manifest, `train` the clean and
//! shortcut checkpoints, `verify` the verification report, `evaluate` the
//! per-method CSV and Markdown tables and `report` a summary. Each stage
//! reads what the previous one wrote under the output directory.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{derive_seed, RunConfig};
pub use error::{HarnessError, Result};
pub use pipeline::{
    cmd_evaluate, cmd_inject, cmd_report, cmd_run_all, cmd_train, cmd_verify, Layout, Manifest,
};
