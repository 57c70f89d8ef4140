//! Front end for the train audit pipeline: configuration, bundle loading and
//! stage orchestration. The `pasta` binary is a thin layer over this.

pub mod bundle;
pub mod config;
pub mod pipeline;

use std::io;

use pasta_core::decision::DecisionError;
use pasta_core::report::ReportError;
use thiserror::Error;

pub use bundle::{load_bundle, BundleError, LoadOptions, MetadataOverrides};
pub use config::{Backend, DastSettings, PipelineConfig, StationSpec};
pub use pipeline::{load_resources, run_pipeline, AuditOutcome, Resources};

pub const EXIT_ACCEPT: i32 = 0;
pub const EXIT_REJECT: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("advisory database unusable: {0}")]
    Database(String),
    #[error("cannot load {0}")]
    Resource(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Load the train at `path` and audit it.
pub fn audit(
    path: &std::path::Path,
    config: &PipelineConfig,
    metadata: MetadataOverrides,
) -> Result<AuditOutcome, PipelineError> {
    let opts = LoadOptions {
        source_glob: config.source_glob.clone(),
        metadata,
    };
    let bundle = load_bundle(path, &opts)?;
    run_pipeline(&bundle, config)
}
