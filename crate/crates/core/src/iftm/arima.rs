//! Online ARIMA(p, d, q) per metric, fitted by recursive least squares.
//!
//! Each metric is differenced `d` times; the differenced value is regressed
//! on its `p` previous values and the `q` previous one-step residuals. The
//! forecast is un-differenced for reporting, and the realized value updates
//! the coefficients with exponential forgetting.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use tracing::debug;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArimaConfig {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    /// Forgetting factor in (0, 1]; 1 weights all history equally.
    pub forgetting: f64,
    /// Initial covariance scale: `P0 = delta * I`.
    pub delta: f64,
    /// Covariance is reset to `delta * I` once its trace exceeds this.
    pub covariance_cap: f64,
}

impl Default for ArimaConfig {
    fn default() -> Self {
        Self {
            p: 1,
            d: 1,
            q: 0,
            forgetting: 0.99,
            delta: 1000.0,
            covariance_cap: 1e8,
        }
    }
}

/// Recursive least squares with exponential forgetting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rls {
    theta: Vec<f64>,
    /// Row-major k x k covariance.
    cov: Vec<f64>,
    forgetting: f64,
    delta: f64,
    cap: f64,
    resets: u64,
}

impl Rls {
    pub fn new(k: usize, forgetting: f64, delta: f64, cap: f64) -> Self {
        assert!(forgetting > 0.0 && forgetting <= 1.0, "forgetting factor must lie in (0, 1]");
        let mut cov = vec![0.0; k * k];
        for i in 0..k {
            cov[i * k + i] = delta;
        }
        Self {
            theta: vec![0.0; k],
            cov,
            forgetting,
            delta,
            cap,
            resets: 0,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.theta
    }

    pub fn covariance(&self) -> &[f64] {
        &self.cov
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    pub fn predict(&self, phi: &[f64]) -> f64 {
        self.theta.iter().zip(phi).map(|(t, x)| t * x).sum()
    }

    /// One update with regressor `phi` and a-priori error `err = y - theta·phi`.
    pub fn update(&mut self, phi: &[f64], err: f64) {
        let k = self.theta.len();
        if k == 0 {
            return;
        }
        let p_phi: Vec<f64> = (0..k)
            .map(|i| (0..k).map(|j| self.cov[i * k + j] * phi[j]).sum())
            .collect();
        let denom = self.forgetting + phi.iter().zip(&p_phi).map(|(a, b)| a * b).sum::<f64>();
        let gain: Vec<f64> = p_phi.iter().map(|v| v / denom).collect();
        for (t, g) in self.theta.iter_mut().zip(&gain) {
            *t += g * err;
        }
        let lam = self.forgetting;
        for i in 0..k {
            for j in 0..k {
                self.cov[i * k + j] = (self.cov[i * k + j] - gain[i] * p_phi[j]) / lam;
            }
        }
        for i in 0..k {
            for j in (i + 1)..k {
                let avg = 0.5 * (self.cov[i * k + j] + self.cov[j * k + i]);
                self.cov[i * k + j] = avg;
                self.cov[j * k + i] = avg;
            }
        }
        self.recondition();
    }

    fn recondition(&mut self) {
        let k = self.theta.len();
        let trace: f64 = (0..k).map(|i| self.cov[i * k + i]).sum();
        let degenerate = !trace.is_finite()
            || trace > self.cap
            || (0..k).any(|i| self.cov[i * k + i] <= 0.0)
            || self.cov.iter().any(|v| !v.is_finite());
        if degenerate {
            debug!(trace, "RLS covariance reset to scaled identity");
            self.cov.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..k {
                self.cov[i * k + i] = self.delta;
            }
            self.resets += 1;
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            self.theta.iter_mut().for_each(|t| *t = 0.0);
        }
    }
}

/// Single-metric online ARIMA model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    p: usize,
    d: usize,
    q: usize,
    rls: Rls,
    /// Last `d` raw values, most recent last.
    history: VecDeque<f64>,
    /// Last `p` differenced values, most recent first.
    lags: VecDeque<f64>,
    /// Last `q` residuals, most recent first.
    residuals: VecDeque<f64>,
    /// `(-1)^k C(d, k)` for k = 1..=d.
    diff_weights: Vec<f64>,
}

impl ArimaModel {
    pub fn new(config: &ArimaConfig) -> Self {
        let diff_weights = (1..=config.d)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * binomial(config.d, k)
            })
            .collect();
        Self {
            p: config.p,
            d: config.d,
            q: config.q,
            rls: Rls::new(config.p + config.q, config.forgetting, config.delta, config.covariance_cap),
            history: VecDeque::with_capacity(config.d + 1),
            lags: VecDeque::from(vec![0.0; config.p]),
            residuals: VecDeque::from(vec![0.0; config.q]),
            diff_weights,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        self.rls.coefficients()
    }

    pub fn rls(&self) -> &Rls {
        &self.rls
    }

    /// Forecasts the next value, then learns from the realized `x`. Returns the forecast.
    pub fn step(&mut self, x: f64) -> f64 {
        if self.history.len() < self.d {
            let forecast = self.history.back().copied().unwrap_or(0.0);
            self.history.push_back(x);
            return forecast;
        }
        // sum_{k=1..d} (-1)^k C(d,k) x_{t-k}; history is oldest-first
        let carried: f64 = self
            .diff_weights
            .iter()
            .zip(self.history.iter().rev())
            .map(|(w, v)| w * v)
            .sum();
        let phi: Vec<f64> = self.lags.iter().chain(self.residuals.iter()).copied().collect();
        let diff_forecast = self.rls.predict(&phi);
        let forecast = diff_forecast - carried;

        let diff = x + carried;
        let residual = diff - diff_forecast;
        self.rls.update(&phi, residual);

        if self.p > 0 {
            self.lags.pop_back();
            self.lags.push_front(diff);
        }
        if self.q > 0 {
            self.residuals.pop_back();
            self.residuals.push_front(residual);
        }
        if self.d > 0 {
            self.history.push_back(x);
            if self.history.len() > self.d {
                self.history.pop_front();
            }
        }
        forecast
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Independent per-metric ARIMA models over a vector stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaState {
    config: ArimaConfig,
    models: Vec<ArimaModel>,
}

impl ArimaState {
    pub fn new(dimension: usize, config: ArimaConfig) -> Self {
        Self {
            config,
            models: (0..dimension).map(|_| ArimaModel::new(&config)).collect(),
        }
    }

    pub fn config(&self) -> &ArimaConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.models.len()
    }

    pub fn models(&self) -> &[ArimaModel] {
        &self.models
    }

    /// One-step forecast of `z` made before seeing it; the models then learn `z`.
    pub fn step(&mut self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.models.len(), "ARIMA dimension mismatch");
        self.models.iter_mut().zip(z).map(|(m, &x)| m.step(x)).collect()
    }
}
