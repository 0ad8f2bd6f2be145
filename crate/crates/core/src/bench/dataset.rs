use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::collector::{metric_header, METRIC_COUNT};
use crate::stream::{MetricHeader, Sample, Tags};

/// Additive level shift of `shift_sigma` marginal standard deviations on
/// `metrics` for samples `onset..onset + duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub onset: usize,
    pub duration: usize,
    pub metrics: Vec<usize>,
    pub shift_sigma: f64,
}

/// Seeded synthetic monitoring data: every metric is a unit-variance AR(1)
/// process scaled and offset to its own level.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub metrics: usize,
    pub seed: u64,
    /// AR(1) coefficient of the base process; 0 gives i.i.d. noise.
    pub phi: f64,
    pub injections: Vec<Injection>,
    pub component: String,
    pub start_ns: u64,
    pub interval_ns: u64,
}

impl SyntheticSpec {
    pub const DEFAULT_PHI: f64 = 0.3;

    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            metrics: METRIC_COUNT,
            seed,
            phi: Self::DEFAULT_PHI,
            injections: Vec::new(),
            component: "node-0".into(),
            start_ns: 1_700_000_000_000_000_000,
            interval_ns: 500_000_000,
        }
    }

    pub fn with_injection(mut self, inj: Injection) -> Self {
        self.injections.push(inj);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.metrics == 0 {
            return Err("at least one metric is required".into());
        }
        if !(self.phi.abs() < 1.0) {
            return Err("phi must lie in (-1, 1)".into());
        }
        for inj in &self.injections {
            if self.samples > 0 && inj.onset >= self.samples {
                return Err(format!("onset {} outside [0, {})", inj.onset, self.samples));
            }
            if !inj.shift_sigma.is_finite() {
                return Err("shift must be finite".into());
            }
            if let Some(m) = inj.metrics.iter().find(|&&m| m >= self.metrics) {
                return Err(format!("metric index {m} out of range"));
            }
        }
        Ok(())
    }

    /// Per-metric level and scale (the marginal standard deviation).
    pub fn levels_and_scales(&self) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_1e7e);
        (0..self.metrics).map(|_| (rng.gen_range(10.0..1000.0), rng.gen_range(0.5..20.0))).collect()
    }
}

/// Generates the dataset. Deterministic for a given spec.
pub fn generate_dataset(spec: &SyntheticSpec) -> (MetricHeader, Vec<Sample>) {
    let header = if spec.metrics == METRIC_COUNT {
        metric_header()
    } else {
        MetricHeader::new((0..spec.metrics).map(|i| format!("m{i}"))).expect("generated names are unique")
    };
    let params = spec.levels_and_scales();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let innov = (1.0 - spec.phi * spec.phi).sqrt();
    // Start from the stationary distribution.
    let mut y: Vec<f64> = (0..spec.metrics).map(|_| rng.sample(StandardNormal)).collect();
    let tags = Tags::default().with("host", &spec.component);
    let mut out = Vec::with_capacity(spec.samples);
    for t in 0..spec.samples {
        let mut values = Vec::with_capacity(spec.metrics);
        for (j, &(level, scale)) in params.iter().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            y[j] = spec.phi * y[j] + innov * eps;
            let shift: f64 = spec
                .injections
                .iter()
                .filter(|i| t >= i.onset && t < i.onset + i.duration && i.metrics.contains(&j))
                .map(|i| i.shift_sigma)
                .sum();
            values.push(level + scale * (y[j] + shift));
        }
        out.push(Sample {
            timestamp: spec.start_ns + t as u64 * spec.interval_ns,
            tags: tags.clone(),
            values,
        });
    }
    (header, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::encode_binary;

    #[test]
    fn empty_dataset() {
        let (h, s) = generate_dataset(&SyntheticSpec::new(0, 1));
        assert_eq!(h.len(), 28);
        assert!(s.is_empty());
    }

    #[test]
    fn deterministic_bytes() {
        let spec = SyntheticSpec::new(10_000, 42);
        let (h1, a) = generate_dataset(&spec);
        let (h2, b) = generate_dataset(&spec);
        assert_eq!(encode_binary(&h1, &a).unwrap(), encode_binary(&h2, &b).unwrap());
        let (_, c) = generate_dataset(&SyntheticSpec::new(10_000, 43));
        assert_ne!(a, c);
    }

    #[test]
    fn injected_shift_is_visible() {
        let spec = SyntheticSpec::new(10_000, 42).with_injection(Injection {
            onset: 5000,
            duration: 100,
            metrics: vec![0, 5, 9, 20],
            shift_sigma: 10.0,
        });
        let ps = spec.levels_and_scales();
        let (_, s) = generate_dataset(&spec);
        let mean = |j: usize, r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            s[r].iter().map(|x| x.values[j]).sum::<f64>() / n
        };
        for j in [0, 5, 9, 20] {
            let d = (mean(j, 5000..5100) - mean(j, 0..5000)) / ps[j].1;
            assert!(d >= 8.0, "metric {j}: {d}");
        }
        let d = (mean(1, 5000..5100) - mean(1, 0..5000)).abs() / ps[1].1;
        assert!(d < 1.0);
    }

    #[test]
    fn marginal_variance_is_scale_squared() {
        let spec = SyntheticSpec::new(20_000, 3);
        let ps = spec.levels_and_scales();
        let (_, s) = generate_dataset(&spec);
        let xs: Vec<f64> = s.iter().map(|x| (x.values[2] - ps[2].0) / ps[2].1).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((v - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn validation() {
        let bad = SyntheticSpec::new(10, 1).with_injection(Injection {
            onset: 10,
            duration: 1,
            metrics: vec![0],
            shift_sigma: 1.0,
        });
        assert!(bad.validate().is_err());
        assert!(SyntheticSpec::new(10, 1).validate().is_ok());
    }
}
