use serde::{Deserialize, Serialize};

/// Dynamic threshold over reconstruction errors: an exponential moving
/// average `mean` and a moving squared deviation `spread`, with
/// `threshold = mean + sigma * sqrt(spread)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    alpha: f64,
    sigma: f64,
    warmup: u64,
    mean: f64,
    spread: f64,
    seen: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdDecision {
    pub anomaly: bool,
    /// Threshold the error was compared against.
    pub threshold: f64,
}

impl ThresholdModel {
    pub const DEFAULT_ALPHA: f64 = 0.1;
    pub const DEFAULT_SIGMA: f64 = 3.0;
    pub const DEFAULT_WARMUP: u64 = 50;

    pub fn new(alpha: f64, sigma: f64, warmup: u64) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
        assert!(sigma > 0.0, "sigma multiplier must be positive");
        Self {
            alpha,
            sigma,
            warmup,
            mean: 0.0,
            spread: 0.0,
            seen: 0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn spread(&self) -> f64 {
        self.spread
    }

    pub fn threshold(&self) -> f64 {
        self.mean + self.sigma * self.spread.sqrt()
    }

    pub fn warmed_up(&self) -> bool {
        self.seen >= self.warmup
    }

    /// Decides against the current threshold, then folds the error into the
    /// baseline unless it was flagged. The first error seeds the mean. Both
    /// moments are updated from the prior state: the deviation is taken
    /// against the mean before this error moved it.
    pub fn update(&mut self, error: f64) -> ThresholdDecision {
        let threshold = self.threshold();
        let anomaly = self.warmed_up() && error > threshold;
        if !anomaly {
            if self.seen == 0 {
                self.mean = error;
                self.spread = 0.0;
            } else {
                let dev = error - self.mean;
                self.mean = self.alpha * error + (1.0 - self.alpha) * self.mean;
                self.spread = self.alpha * dev * dev + (1.0 - self.alpha) * self.spread;
            }
            self.seen += 1;
        }
        ThresholdDecision { anomaly, threshold }
    }
}

impl Default for ThresholdModel {
    fn default() -> Self {
        Self::new(Self::DEFAULT_ALPHA, Self::DEFAULT_SIGMA, Self::DEFAULT_WARMUP)
    }
}
