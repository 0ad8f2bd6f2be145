//! Label-, region- and capacity-aware placement of analysis workloads.
//!
//! Data sources, analysis steps and nodes live in a [`Registry`]. Every
//! reconcile computes the desired (step, source) pairs from ingest selectors,
//! keeps running workloads that are still valid, and places the rest as close
//! to their source as capacity and region restrictions allow.

mod controller;
mod objects;
mod plan;
mod registry;

use thiserror::Error;

pub use controller::{Controller, Mutation, WorkloadRunner};
pub use objects::{AnalysisStep, DataSource, Node, Object, Resources, Selector};
pub use plan::{match_sources, place, reconcile, PlacementPlan, PlanLine, Unschedulable, Workload, WorkloadKey};
pub use registry::Registry;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("{kind} {name:?} already registered")]
    Duplicate { kind: &'static str, name: String },
    #[error("no {kind} named {name:?}")]
    Unknown { kind: &'static str, name: String },
    #[error("invalid {kind} {name:?}: {reason}")]
    Invalid { kind: &'static str, name: String, reason: String },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot spawn workload {key}: {source}")]
    Spawn { key: String, source: std::io::Error },
}
