use bincode::Options;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    AnomalyEvent, ArimaState, BirchState, DetectError, DetectorKind, DetectorParams, ModelBlob, ModelError,
    RnnState, Standardizer, ThresholdModel,
};
use crate::stream::{ComponentId, Sample};

/// Maps a standardized sample to its expected value.
pub trait IdentityFunction: Clone + Serialize + DeserializeOwned {
    const KIND: DetectorKind;

    fn dimension(&self) -> usize;

    /// Returns the reconstruction of `z` computed before `z` is learned from.
    fn reconstruct(&mut self, z: &[f64]) -> Vec<f64>;
}

impl IdentityFunction for BirchState {
    const KIND: DetectorKind = DetectorKind::Birch;

    fn dimension(&self) -> usize {
        BirchState::dimension(self)
    }

    fn reconstruct(&mut self, z: &[f64]) -> Vec<f64> {
        self.insert(z).value
    }
}

impl IdentityFunction for ArimaState {
    const KIND: DetectorKind = DetectorKind::Arima;

    fn dimension(&self) -> usize {
        ArimaState::dimension(self)
    }

    fn reconstruct(&mut self, z: &[f64]) -> Vec<f64> {
        self.step(z)
    }
}

impl IdentityFunction for RnnState {
    const KIND: DetectorKind = DetectorKind::Rnn;

    fn dimension(&self) -> usize {
        RnnState::dimension(self)
    }

    fn reconstruct(&mut self, z: &[f64]) -> Vec<f64> {
        self.step(z)
    }
}

/// Outcome of scoring one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub error: f64,
    pub threshold: f64,
    pub anomaly: bool,
    pub per_metric_error: Vec<f64>,
}

/// Standardizer, identity function and threshold for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Detector<F: IdentityFunction> {
    component: ComponentId,
    standardizer: Standardizer,
    identity: F,
    threshold: ThresholdModel,
    processed: u64,
}

impl<F: IdentityFunction> Detector<F> {
    pub fn new(component: ComponentId, identity: F, threshold: ThresholdModel) -> Self {
        let standardizer = Standardizer::new(identity.dimension());
        Self { component, standardizer, identity, threshold, processed: 0 }
    }

    pub fn component(&self) -> &ComponentId {
        &self.component
    }

    pub fn identity(&self) -> &F {
        &self.identity
    }

    pub fn threshold(&self) -> &ThresholdModel {
        &self.threshold
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn dimension(&self) -> usize {
        self.identity.dimension()
    }

    pub fn process(&mut self, sample: &Sample) -> Result<Verdict, DetectError> {
        self.score(&sample.values)
    }

    pub fn score(&mut self, values: &[f64]) -> Result<Verdict, DetectError> {
        if values.len() != self.dimension() {
            return Err(DetectError::Dimension { expected: self.dimension(), found: values.len() });
        }
        let z = self.standardizer.standardize(values);
        let recon = self.identity.reconstruct(&z);
        let per_metric_error: Vec<f64> = z.iter().zip(&recon).map(|(a, b)| (a - b).abs()).collect();
        let mut error = per_metric_error.iter().map(|e| e * e).sum::<f64>().sqrt();
        if !error.is_finite() {
            // Should not happen after standardization; never let it poison the baseline.
            error = f64::MAX;
        }
        let decision = self.threshold.update(error);
        self.processed += 1;
        Ok(Verdict { error, threshold: decision.threshold, anomaly: decision.anomaly, per_metric_error })
    }

    /// Scores the sample and returns an event if it was flagged.
    pub fn detect(&mut self, sample: &Sample) -> Result<Option<AnomalyEvent>, DetectError> {
        let v = self.process(sample)?;
        Ok(v.anomaly.then(|| AnomalyEvent {
            component: self.component.clone(),
            timestamp: sample.timestamp,
            detector: F::KIND,
            error: v.error,
            threshold: v.threshold,
            per_metric_error: v.per_metric_error,
        }))
    }

    pub fn snapshot(&self) -> ModelBlob {
        let payload = bincode::serialize(self).expect("detector state is always serializable");
        ModelBlob { kind: F::KIND, payload }
    }

    pub fn restore(blob: &ModelBlob) -> Result<Self, ModelError> {
        if blob.kind != F::KIND {
            return Err(ModelError::TypeMismatch { expected: F::KIND, found: blob.kind });
        }
        // Same wire format as `bincode::serialize`, but a payload must be
        // consumed exactly and cannot claim more bytes than it has.
        bincode::DefaultOptions::new()
            .with_fixint_encoding()
            .reject_trailing_bytes()
            .with_limit(blob.payload.len() as u64)
            .deserialize(&blob.payload)
            .map_err(|e| ModelError::Decode(e.to_string()))
    }
}

/// A detector of any kind, chosen at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyDetector {
    Birch(Detector<BirchState>),
    Arima(Detector<ArimaState>),
    Rnn(Detector<RnnState>),
}

macro_rules! each {
    ($self:expr, $d:ident => $body:expr) => {
        match $self {
            AnyDetector::Birch($d) => $body,
            AnyDetector::Arima($d) => $body,
            AnyDetector::Rnn($d) => $body,
        }
    };
}

impl AnyDetector {
    pub fn new(
        kind: DetectorKind,
        component: ComponentId,
        dimension: usize,
        params: &DetectorParams,
    ) -> Result<Self, DetectError> {
        let threshold = params.threshold()?;
        Ok(match kind {
            DetectorKind::Birch => {
                AnyDetector::Birch(Detector::new(component, BirchState::new(dimension, params.birch()?), threshold))
            }
            DetectorKind::Arima => {
                AnyDetector::Arima(Detector::new(component, ArimaState::new(dimension, params.arima()?), threshold))
            }
            DetectorKind::Rnn => {
                AnyDetector::Rnn(Detector::new(component, RnnState::new(dimension, params.rnn()?), threshold))
            }
        })
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            AnyDetector::Birch(_) => DetectorKind::Birch,
            AnyDetector::Arima(_) => DetectorKind::Arima,
            AnyDetector::Rnn(_) => DetectorKind::Rnn,
        }
    }

    pub fn component(&self) -> &ComponentId {
        each!(self, d => d.component())
    }

    pub fn dimension(&self) -> usize {
        each!(self, d => d.dimension())
    }

    pub fn processed(&self) -> u64 {
        each!(self, d => d.processed())
    }

    pub fn threshold_model(&self) -> &ThresholdModel {
        each!(self, d => d.threshold())
    }

    pub fn process(&mut self, sample: &Sample) -> Result<Verdict, DetectError> {
        each!(self, d => d.process(sample))
    }

    pub fn score(&mut self, values: &[f64]) -> Result<Verdict, DetectError> {
        each!(self, d => d.score(values))
    }

    pub fn detect(&mut self, sample: &Sample) -> Result<Option<AnomalyEvent>, DetectError> {
        each!(self, d => d.detect(sample))
    }

    pub fn snapshot(&self) -> ModelBlob {
        each!(self, d => d.snapshot())
    }

    /// Rebuilds a detector of whatever kind the blob holds.
    pub fn restore(blob: &ModelBlob) -> Result<Self, ModelError> {
        Ok(match blob.kind {
            DetectorKind::Birch => AnyDetector::Birch(Detector::restore(blob)?),
            DetectorKind::Arima => AnyDetector::Arima(Detector::restore(blob)?),
            DetectorKind::Rnn => AnyDetector::Rnn(Detector::restore(blob)?),
        })
    }

    /// Restores a blob that must be of `expected` kind.
    pub fn restore_as(expected: DetectorKind, blob: &ModelBlob) -> Result<Self, ModelError> {
        if blob.kind != expected {
            return Err(ModelError::TypeMismatch { expected, found: blob.kind });
        }
        Self::restore(blob)
    }
}
