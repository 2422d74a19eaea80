//! Experiment orchestration: configuration, running every method on shared
//! masked test pairs, report tables and SVG plots.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{DataConfig, ExperimentConfig, MaskingKind, Method};
pub use experiment::{
    export_pairs, hash_pairs, load_dataset, prepare_pairs, run_experiment, RunManifest, RunOutcome,
    Stage,
};
pub use plot::{plot_reconstruction, render_reconstruction};
pub use report::{render_markdown, write_report_csv, ReportRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{method} on {masking} masking: {context}")]
    Method {
        method: Method,
        masking: MaskingKind,
        context: String,
    },
    #[error("missing checkpoint {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error(
        "fairness check failed: {method} saw test inputs hashing to {got}, expected {expected}"
    )]
    Fairness {
        method: Method,
        expected: String,
        got: String,
    },
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Surface(#[from] crate::surface::SurfaceError),
    #[error(transparent)]
    Mask(#[from] crate::masking::MaskError),
    #[error(transparent)]
    Dae(#[from] crate::dae::DaeError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
