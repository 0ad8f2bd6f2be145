use std::fmt;
use std::time::{Duration, Instant};

/// Fraction of one core, in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CpuBudget(f64);

impl CpuBudget {
    pub const FULL: CpuBudget = CpuBudget(1.0);

    pub fn new(b: f64) -> Result<Self, String> {
        if b > 0.0 && b <= 1.0 {
            Ok(Self(b))
        } else {
            Err(format!("CPU budget {b} outside (0, 1]"))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// 1.0, 0.9, ..., 0.1
    pub fn sweep() -> Vec<CpuBudget> {
        (1..=10).rev().map(|i| CpuBudget(f64::from(i) / 10.0)).collect()
    }
}

impl fmt::Display for CpuBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

/// Sleep-based stand-in for a cgroup CPU quota.
///
/// After `t` of work the throttle owes `t(1-b)/b` of idle time. The debt is
/// paid in sleeps of at least [`Throttle::QUANTUM`] and measured, so
/// oversleeping is credited against later debt.
#[derive(Debug)]
pub struct Throttle {
    budget: f64,
    debt: f64,
    slept: Duration,
}

impl Throttle {
    pub const QUANTUM: Duration = Duration::from_millis(1);

    pub fn new(budget: CpuBudget) -> Self {
        Self { budget: budget.get(), debt: 0.0, slept: Duration::ZERO }
    }

    /// Charges `busy` and sleeps if enough debt has built up. Returns the sleep taken.
    pub fn charge(&mut self, busy: Duration) -> Duration {
        if self.budget >= 1.0 {
            return Duration::ZERO;
        }
        self.debt += busy.as_secs_f64() * (1.0 - self.budget) / self.budget;
        if self.debt < Self::QUANTUM.as_secs_f64() {
            return Duration::ZERO;
        }
        let start = Instant::now();
        std::thread::sleep(Duration::from_secs_f64(self.debt));
        let actual = start.elapsed();
        self.debt -= actual.as_secs_f64();
        self.slept += actual;
        actual
    }

    pub fn total_slept(&self) -> Duration {
        self.slept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub algorithm: String,
    pub budget: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
    /// Mean busy time alone, without throttle sleep.
    pub busy_mean_ms: f64,
}

pub const WARMUP_SAMPLES: usize = 100;

/// Runs `work` over every item under `budget` and reports per-item latency
/// including throttle sleep, excluding the first [`WARMUP_SAMPLES`] items.
pub fn throttled_run<T>(
    algorithm: &str,
    items: &[T],
    budget: CpuBudget,
    mut work: impl FnMut(&T),
) -> LatencyRow {
    let mut throttle = Throttle::new(budget);
    let mut lat = Vec::with_capacity(items.len().saturating_sub(WARMUP_SAMPLES));
    let mut busy_total = 0.0;
    for (i, item) in items.iter().enumerate() {
        let t0 = Instant::now();
        work(item);
        let busy = t0.elapsed();
        let slept = throttle.charge(busy);
        if i >= WARMUP_SAMPLES {
            lat.push((busy + slept).as_secs_f64() * 1e3);
            busy_total += busy.as_secs_f64() * 1e3;
        }
    }
    let n = lat.len();
    let mean = if n == 0 { 0.0 } else { lat.iter().sum::<f64>() / n as f64 };
    let var = if n < 2 { 0.0 } else { lat.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 };
    LatencyRow {
        algorithm: algorithm.to_string(),
        budget: budget.get(),
        mean_ms: mean,
        std_ms: var.sqrt(),
        samples: n,
        busy_mean_ms: if n == 0 { 0.0 } else { busy_total / n as f64 },
    }
}

/// Spins for `d` of wall time.
pub fn busy_wait(d: Duration) {
    let t = Instant::now();
    while t.elapsed() < d {
        std::hint::spin_loop();
    }
}
