//! Experiment workbench around `adashare-core`: configuration files,
//! resumable runs with manifests, multi-seed plans with a summary, and the
//! `adashare` command-line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod plan;
pub mod runs;

pub use config::{Variant, WorkbenchConfig};
pub use error::{Result, WorkbenchError};
pub use plan::{render_workspace, run_plan, ExperimentPlan, Summary};
pub use runs::{RunManifest, Workspace};
