//! Edge AIOps toolkit.
//!
//! A monitoring [`collector`] samples host counters at high frequency into a
//! [`stream`] of [`stream::Sample`]s. Per-component detectors in [`iftm`]
//! reconstruct every sample and flag anomalies with a dynamic threshold.
//! [`rca`] groups anomaly events into incidents and ranks root-cause
//! candidates by onset; [`engine`] matches incidents to a remediation
//! catalogue. [`orchestrator`] places analysis workloads next to their data
//! sources, [`repo`] keeps detector checkpoints for warm starts, and
//! [`bench`] reproduces the overhead and latency experiments.

pub mod bench;
pub mod collector;
pub mod engine;
pub mod iftm;
pub mod orchestrator;
pub mod pipeline;
pub mod rca;
pub mod repo;
pub mod stream;
