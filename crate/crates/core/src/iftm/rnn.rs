//! Single-cell LSTM forecaster trained online.
//!
//! The forecast for sample `t` is the linear readout of the hidden state left
//! by sample `t-1`. After the forecast is scored, one SGD step is taken on
//! `0.5 * |forecast - z|²`, back-propagating through the most recent cell
//! update only (inputs to that update are treated as constants). The cell is
//! then advanced with `z` as input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    /// Cell weights are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            learning_rate: 0.01,
            init_scale: 0.08,
            seed: 42,
        }
    }
}

/// Offsets into the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Layout {
    input: usize,
    hidden: usize,
    /// Gate weights, `4H x (I + H)`, gate blocks ordered input, forget, candidate, output.
    w: usize,
    b: usize,
    wy: usize,
    by: usize,
    len: usize,
}

impl Layout {
    fn new(input: usize, hidden: usize) -> Self {
        let w = 0;
        let b = w + 4 * hidden * (input + hidden);
        let wy = b + 4 * hidden;
        let by = wy + input * hidden;
        let len = by + input;
        Self { input, hidden, w, b, wy, by, len }
    }

    fn cols(&self) -> usize {
        self.input + self.hidden
    }
}

/// Activations of one cell update, kept for the next step's backward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellTrace {
    x: Vec<f64>,
    h_in: Vec<f64>,
    c_in: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnState {
    config: RnnConfig,
    layout: Layout,
    params: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    trace: Option<CellTrace>,
    skipped_updates: u64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl RnnState {
    /// Cell weights random in `±init_scale`; biases and readout start at zero.
    pub fn new(dimension: usize, config: RnnConfig) -> Self {
        assert!(config.hidden > 0, "hidden size must be positive");
        let layout = Layout::new(dimension, config.hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.len];
        for w in &mut params[layout.w..layout.b] {
            *w = rng.gen_range(-config.init_scale..=config.init_scale);
        }
        Self {
            config,
            layout,
            params,
            h: vec![0.0; config.hidden],
            c: vec![0.0; config.hidden],
            trace: None,
            skipped_updates: 0,
        }
    }

    pub fn config(&self) -> &RnnConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.layout.input
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn hidden_state(&self) -> &[f64] {
        &self.h
    }

    pub fn skipped_updates(&self) -> u64 {
        self.skipped_updates
    }

    fn readout(&self, params: &[f64], h: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        (0..l.input)
            .map(|k| {
                let row = &params[l.wy + k * l.hidden..l.wy + (k + 1) * l.hidden];
                params[l.by + k] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn cell(&self, params: &[f64], x: &[f64], h_in: &[f64], c_in: &[f64]) -> CellTrace {
        let l = &self.layout;
        let hd = l.hidden;
        let cols = l.cols();
        let mut pre = vec![0.0; 4 * hd];
        for (r, out) in pre.iter_mut().enumerate() {
            let row = &params[l.w + r * cols..l.w + (r + 1) * cols];
            let (wx, wh) = row.split_at(l.input);
            *out = params[l.b + r]
                + wx.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                + wh.iter().zip(h_in).map(|(w, v)| w * v).sum::<f64>();
        }
        let i: Vec<f64> = pre[0..hd].iter().map(|v| sigmoid(*v)).collect();
        let f: Vec<f64> = pre[hd..2 * hd].iter().map(|v| sigmoid(*v)).collect();
        let g: Vec<f64> = pre[2 * hd..3 * hd].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * hd..4 * hd].iter().map(|v| sigmoid(*v)).collect();
        let c_out = (0..hd).map(|k| f[k] * c_in[k] + i[k] * g[k]).collect();
        CellTrace {
            x: x.to_vec(),
            h_in: h_in.to_vec(),
            c_in: c_in.to_vec(),
            i,
            f,
            g,
            o,
            c_out,
        }
    }

    fn hidden_of(trace: &CellTrace) -> Vec<f64> {
        trace.o.iter().zip(&trace.c_out).map(|(o, c)| o * c.tanh()).collect()
    }

    /// Forecast for the next sample from the current hidden state.
    pub fn forecast(&self) -> Vec<f64> {
        self.readout(&self.params, &self.h)
    }

    /// One-step loss `0.5 * |readout(cell(params)) - target|²` with the last
    /// cell update recomputed under `params`. Without a recorded cell update
    /// the hidden state is held fixed.
    pub fn one_step_loss(&self, params: &[f64], target: &[f64]) -> f64 {
        let h = match &self.trace {
            Some(t) => Self::hidden_of(&self.cell(params, &t.x, &t.h_in, &t.c_in)),
            None => self.h.clone(),
        };
        0.5 * self
            .readout(params, &h)
            .iter()
            .zip(target)
            .map(|(p, z)| (p - z) * (p - z))
            .sum::<f64>()
    }

    /// Analytic gradient of [`Self::one_step_loss`] at the current parameters.
    pub fn gradient(&self, target: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let hd = l.hidden;
        let cols = l.cols();
        let mut grad = vec![0.0; l.len];
        let residual: Vec<f64> = self.forecast().iter().zip(target).map(|(p, z)| p - z).collect();

        for k in 0..l.input {
            grad[l.by + k] = residual[k];
            for j in 0..hd {
                grad[l.wy + k * hd + j] = residual[k] * self.h[j];
            }
        }

        let Some(t) = &self.trace else { return grad };
        let mut dh = vec![0.0; hd];
        for k in 0..l.input {
            let row = &self.params[l.wy + k * hd..l.wy + (k + 1) * hd];
            for j in 0..hd {
                dh[j] += row[j] * residual[k];
            }
        }
        let mut da = vec![0.0; 4 * hd];
        for j in 0..hd {
            let tc = t.c_out[j].tanh();
            let d_o = dh[j] * tc;
            let d_c = dh[j] * t.o[j] * (1.0 - tc * tc);
            let d_i = d_c * t.g[j];
            let d_f = d_c * t.c_in[j];
            let d_g = d_c * t.i[j];
            da[j] = d_i * t.i[j] * (1.0 - t.i[j]);
            da[hd + j] = d_f * t.f[j] * (1.0 - t.f[j]);
            da[2 * hd + j] = d_g * (1.0 - t.g[j] * t.g[j]);
            da[3 * hd + j] = d_o * t.o[j] * (1.0 - t.o[j]);
        }
        for (r, &d) in da.iter().enumerate() {
            grad[l.b + r] = d;
            if d == 0.0 {
                continue;
            }
            let row = &mut grad[l.w + r * cols..l.w + (r + 1) * cols];
            let (gx, gh) = row.split_at_mut(l.input);
            for (g, v) in gx.iter_mut().zip(&t.x) {
                *g = d * v;
            }
            for (g, v) in gh.iter_mut().zip(&t.h_in) {
                *g = d * v;
            }
        }
        grad
    }

    /// Forecast `z`, take one gradient step toward it, then advance the cell with `z`.
    pub fn step(&mut self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.layout.input, "RNN dimension mismatch");
        let forecast = self.forecast();
        let grad = self.gradient(z);
        if grad.iter().all(|g| g.is_finite()) {
            let lr = self.config.learning_rate;
            for (p, g) in self.params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        } else {
            warn!("non-finite gradient; update skipped and activations reset");
            self.skipped_updates += 1;
            self.h.iter_mut().for_each(|v| *v = 0.0);
            self.c.iter_mut().for_each(|v| *v = 0.0);
            self.trace = None;
        }
        let trace = self.cell(&self.params, z, &self.h, &self.c);
        self.h = Self::hidden_of(&trace);
        self.c = trace.c_out.clone();
        self.trace = Some(trace);
        forecast
    }
}
