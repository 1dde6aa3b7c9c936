//! Benchmark harness, migration timelines and run configuration for the
//! `vmr` command-line tool.

pub mod algorithms;
pub mod bench;
pub mod config;
pub mod timeline;

use std::path::PathBuf;

use thiserror::Error;
use vmr_core::datasets::DatasetError;
use vmr_core::objectives::ObjectiveError;
use vmr_core::SimError;
use vmr_policy::PolicyError;

pub use algorithms::{solve, AlgoParams, Algorithm, Solution, SolveContext};
pub use bench::{run_bench, BenchConfig, BenchReport, BenchRow, SummaryRow};
pub use config::{load_mappings, parse_objective, RunConfig};
pub use timeline::{emit_timeline, timeline_text, write_timeline_csv, TimelineRow};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{algorithm} on {mapping} (mnl {mnl}) took {secs:.3}s, over the {budget:.3}s budget")]
    Budget {
        algorithm: String,
        mapping: String,
        mnl: usize,
        secs: f64,
        budget: f64,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// Process exit code: 1 validation failure, 2 infeasible, 3 strict
    /// budget violation.
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Infeasible(_) => 2,
            BenchError::Budget { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }
}
