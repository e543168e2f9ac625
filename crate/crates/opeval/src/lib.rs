//! Config-driven experiment pipeline: collect logged data, fit nuisances,
//! run point and distributional estimators, and score policy selection.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod stages;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::{PipelineError, Result};
pub use pipeline::{Pipeline, RunManifest, Stage};
