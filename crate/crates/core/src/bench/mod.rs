//! Overhead and latency experiments: collector frequency sweep, detector
//! latency under a CPU budget, and a just-in-time feasibility check.

mod dataset;
mod jit;
mod sweep;
mod throttle;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{generate_dataset, Injection, SyntheticSpec};
pub use jit::{run_jit_check, JitConfig, JitReport, JitWorkload};
pub use sweep::{algorithm_label, run_budget_sweep, run_frequency_sweep, run_latency, FreqRow};
pub use throttle::{busy_wait, throttled_run, CpuBudget, LatencyRow, Throttle, WARMUP_SAMPLES};

use crate::collector::CollectError;
use crate::iftm::DetectError;
use crate::stream::CodecError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("total memory unavailable")]
    NoMemInfo,
    #[error("benchmark worker panicked")]
    WorkerPanicked,
    #[error("{0}")]
    Schema(String),
}

pub const BUDGET_CSV_NOTE: &str =
    "# ms/sample: pure per-sample detector processing incl. throttle sleep; decode excluded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqCsvRow {
    pub ms: u64,
    pub cpu: f64,
    pub mem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCsvRow {
    pub cpu: f64,
    #[serde(rename = "BIRCH")]
    pub birch: Option<f64>,
    #[serde(rename = "LSTM")]
    pub lstm: Option<f64>,
    #[serde(rename = "ARIMA")]
    pub arima: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitCsvRow {
    pub ms: u64,
    pub algorithm: String,
    pub collector_cpu: f64,
    pub detector_cpu: f64,
    pub combined_cpu: f64,
    pub max_depth: usize,
    pub samples: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitPlotRow {
    pub ms: u64,
    pub cpu: f64,
    pub adcpuarima: Option<f64>,
    pub adcpucabirch: Option<f64>,
}

impl From<&FreqRow> for FreqCsvRow {
    fn from(r: &FreqRow) -> Self {
        Self { ms: r.ms, cpu: r.cpu, mem: r.mem }
    }
}

impl From<&JitReport> for JitCsvRow {
    fn from(r: &JitReport) -> Self {
        Self {
            ms: r.interval.as_millis() as u64,
            algorithm: r.workload.clone(),
            collector_cpu: r.collector_cpu * 100.0,
            detector_cpu: r.detector_cpu * 100.0,
            combined_cpu: r.combined_cpu * 100.0,
            max_depth: r.max_depth,
            samples: r.samples,
            pass: r.pass,
        }
    }
}

/// Pivots latency rows into one row per budget, highest budget first.
pub fn budget_table(rows: &[LatencyRow]) -> Vec<BudgetCsvRow> {
    let mut budgets: Vec<f64> = rows.iter().map(|r| r.budget).collect();
    budgets.sort_by(|a, b| b.total_cmp(a));
    budgets.dedup();
    budgets
        .into_iter()
        .map(|b| {
            let find = |label: &str| rows.iter().find(|r| r.budget == b && r.algorithm == label).map(|r| r.mean_ms);
            BudgetCsvRow { cpu: b, birch: find("BIRCH"), lstm: find("LSTM"), arima: find("ARIMA") }
        })
        .collect()
}

/// Writes serializable rows as CSV, optionally after a `#` comment line.
pub fn write_csv<T: Serialize>(mut w: impl Write, note: Option<&str>, rows: &[T]) -> Result<(), BenchError> {
    if let Some(n) = note {
        writeln!(w, "{n}")?;
    }
    let mut cw = csv::Writer::from_writer(w);
    for r in rows {
        cw.serialize(r)?;
    }
    cw.flush()?;
    Ok(())
}

/// Reads rows written by [`write_csv`], checking the header matches `expected`.
pub fn read_csv<T: for<'de> Deserialize<'de>>(r: impl BufRead, expected: &[&str]) -> Result<Vec<T>, BenchError> {
    let mut cr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header: Vec<String> = cr.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(BenchError::Schema(format!("header {header:?}, expected {expected:?}")));
    }
    cr.deserialize().map(|r| r.map_err(BenchError::from)).collect()
}

pub const FREQ_HEADER: [&str; 3] = ["ms", "cpu", "mem"];
pub const BUDGET_HEADER: [&str; 4] = ["cpu", "BIRCH", "LSTM", "ARIMA"];
pub const JIT_HEADER: [&str; 8] =
    ["ms", "algorithm", "collector_cpu", "detector_cpu", "combined_cpu", "max_depth", "samples", "pass"];
pub const JIT_PLOT_HEADER: [&str; 4] = ["ms", "cpu", "adcpuarima", "adcpucabirch"];

/// Merges just-in-time rows into the per-interval layout of the utilization
/// plot: collector CPU and detector CPU per algorithm, in percent.
pub fn jit_plot_rows(rows: &[JitCsvRow]) -> Vec<JitPlotRow> {
    let mut ms: Vec<u64> = rows.iter().map(|r| r.ms).collect();
    ms.sort_unstable();
    ms.dedup();
    ms.into_iter()
        .map(|m| {
            let at: Vec<&JitCsvRow> = rows.iter().filter(|r| r.ms == m).collect();
            let cpu = at.iter().map(|r| r.collector_cpu).sum::<f64>() / at.len() as f64;
            let det = |alg: &str| at.iter().find(|r| r.algorithm == alg).map(|r| r.detector_cpu);
            JitPlotRow { ms: m, cpu, adcpuarima: det("arima"), adcpucabirch: det("birch") }
        })
        .collect()
}

pub fn write_csv_file<T: Serialize>(path: &Path, note: Option<&str>, rows: &[T]) -> Result<(), BenchError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(f, note, rows)
}

pub fn read_csv_file<T: for<'de> Deserialize<'de>>(path: &Path, expected: &[&str]) -> Result<Vec<T>, BenchError> {
    read_csv(std::io::BufReader::new(std::fs::File::open(path)?), expected)
}
