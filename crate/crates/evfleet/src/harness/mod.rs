//! Experiment orchestration: configuration, dataset ingestion or synthesis,
//! participation scenarios, seeded repetitions and file formats.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod experiment;
pub mod fleet;
pub mod io;

pub use config::ExperimentConfig;
pub use experiment::{
    prepare_chunks, run_experiment, run_experiment_with_plans, ChunkInput, ExperimentResult,
    RepetitionResult,
};
pub use fleet::{ingest_fleet, synthesize_fleet, AgentRecord, FleetParams, FleetScenario};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} row {row}: {message}")]
    Schema {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("{path}: no trip rows")]
    EmptyTrips { path: PathBuf },
    #[error("vehicle {vehicle}: {source}")]
    Vehicle {
        vehicle: String,
        #[source]
        source: crate::model::ModelError,
    },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("repetition {rep}: {source}")]
    Repetition {
        rep: usize,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Plan(#[from] crate::plangen::PlanError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

impl HarnessError {
    pub(crate) fn in_repetition(rep: usize) -> impl FnOnce(HarnessError) -> HarnessError {
        move |source| HarnessError::Repetition {
            rep,
            source: Box::new(source),
        }
    }
}
