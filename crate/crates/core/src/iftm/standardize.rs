use serde::{Deserialize, Serialize};
use tracing::debug;

/// Floor applied to the running standard deviation.
pub const STD_FLOOR: f64 = 1e-9;

/// Per-metric running mean and variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Standardizer {
    pub fn new(dimension: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dimension],
            m2: vec![0.0; dimension],
        }
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance of each metric seen so far.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.mean.len()];
        }
        self.m2.iter().map(|m| (m / self.count as f64).max(0.0)).collect()
    }

    /// Folds `x` into the running moments, then returns `(x - mean) / max(std, 1e-9)`.
    /// Non-finite components are replaced by the running mean first.
    pub fn standardize(&mut self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.mean.len(), "standardizer dimension mismatch");
        self.count += 1;
        let n = self.count as f64;
        let mut z = Vec::with_capacity(x.len());
        for (i, &raw) in x.iter().enumerate() {
            let v = if raw.is_finite() {
                raw
            } else {
                debug!(metric = i, value = raw, "non-finite value replaced by running mean");
                self.mean[i]
            };
            let delta = v - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (v - self.mean[i]);
            let std = (self.m2[i] / n).max(0.0).sqrt();
            z.push((v - self.mean[i]) / std.max(STD_FLOOR));
        }
        z
    }
}
