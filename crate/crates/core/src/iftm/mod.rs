//! Identity-function-and-threshold anomaly detection.
//!
//! Each monitored component gets its own [`Detector`]: samples are
//! standardized, reconstructed by an identity function (BIRCH micro-clusters,
//! online ARIMA or an LSTM forecaster), and the Euclidean reconstruction error
//! is judged by an EMA [`ThresholdModel`].

pub mod arima;
pub mod birch;
mod detector;
mod params;
pub mod rnn;
mod standardize;
mod threshold;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arima::{ArimaConfig, ArimaModel, ArimaState};
pub use birch::{BirchConfig, BirchState, MicroCluster};
pub use detector::{AnyDetector, Detector, IdentityFunction, Verdict};
pub use params::DetectorParams;
pub use rnn::{RnnConfig, RnnState};
pub use standardize::Standardizer;
pub use threshold::{ThresholdDecision, ThresholdModel};

use crate::stream::ComponentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Birch,
    Arima,
    Rnn,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Birch, DetectorKind::Arima, DetectorKind::Rnn];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Birch => "birch",
            DetectorKind::Arima => "arima",
            DetectorKind::Rnn => "rnn",
        }
    }

    /// Type tag used in serialized model blobs.
    pub fn tag(self) -> u8 {
        match self {
            DetectorKind::Birch => 1,
            DetectorKind::Arima => 2,
            DetectorKind::Rnn => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "birch" | "cabirch" => Ok(DetectorKind::Birch),
            "arima" => Ok(DetectorKind::Arima),
            "rnn" | "lstm" => Ok(DetectorKind::Rnn),
            other => Err(format!("unknown detector {other:?} (expected birch, arima or rnn)")),
        }
    }
}

/// Serialized detector state tagged with its detector type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelBlob {
    pub kind: DetectorKind,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model type mismatch: expected {expected} detector, found {found}")]
    TypeMismatch { expected: DetectorKind, found: DetectorKind },
    #[error("corrupt model payload: {0}")]
    Decode(String),
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("sample has {found} values, detector expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid detector parameter: {0}")]
    Params(String),
}

/// A flagged sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub component: ComponentId,
    #[serde(rename = "ts_ns")]
    pub timestamp: u64,
    pub detector: DetectorKind,
    pub error: f64,
    pub threshold: f64,
    pub per_metric_error: Vec<f64>,
}
