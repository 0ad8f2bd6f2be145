use std::io;
use std::time::Duration;

use tracing::info;

use super::{throttled_run, BenchError, CpuBudget, LatencyRow};
use crate::collector::{overhead, run_collector, CollectorConfig, OverheadReport, SourceKind, StopSignal};
use crate::iftm::{AnyDetector, DetectorKind, DetectorParams};
use crate::stream::{BinaryWriter, Sample, Tags};

/// One frequency-sweep point in the units of the overhead plot.
#[derive(Debug, Clone)]
pub struct FreqRow {
    pub ms: u64,
    /// Collector thread CPU, percent of one core.
    pub cpu: f64,
    /// Peak RSS as percent of total memory.
    pub mem: f64,
    pub report: OverheadReport,
}

/// Runs the collector at each interval for `duration`, encoding every sample
/// to a null sink, and reports its own CPU and memory use.
pub fn run_frequency_sweep(
    intervals: &[Duration],
    duration: Duration,
    source: &SourceKind,
) -> Result<Vec<FreqRow>, BenchError> {
    let total_mem = overhead::total_memory_bytes().ok_or(BenchError::NoMemInfo)?;
    let header = crate::collector::metric_header();
    let mut rows = Vec::with_capacity(intervals.len());
    for &interval in intervals {
        let config = CollectorConfig::new(interval, Tags::default().with("host", "bench"), source.clone())?
            .with_run_for(duration);
        let mut src = config.open_source()?;
        let mut sink = BinaryWriter::new(io::sink(), &header)?;
        let stop = StopSignal::new();
        let report = run_collector(&config, src.as_mut(), &stop, |s: Sample| sink.write_sample(&s))?;
        let row = FreqRow {
            ms: interval.as_millis() as u64,
            cpu: report.cpu_self_fraction * 100.0,
            mem: report.rss_bytes as f64 / total_mem as f64 * 100.0,
            report,
        };
        info!(ms = row.ms, cpu = row.cpu, mem = row.mem, "frequency point done");
        rows.push(row);
    }
    Ok(rows)
}

/// Column label used in latency tables.
pub fn algorithm_label(kind: DetectorKind) -> &'static str {
    match kind {
        DetectorKind::Birch => "BIRCH",
        DetectorKind::Rnn => "LSTM",
        DetectorKind::Arima => "ARIMA",
    }
}

/// Per-sample latency of a fresh detector over `samples` under `budget`.
/// Only detector processing is timed; samples are already decoded.
pub fn run_latency(
    kind: DetectorKind,
    params: &DetectorParams,
    samples: &[Sample],
    budget: CpuBudget,
) -> Result<LatencyRow, BenchError> {
    let dim = samples.first().map_or(crate::collector::METRIC_COUNT, |s| s.values.len());
    let mut det = AnyDetector::new(kind, "bench".into(), dim, params)?;
    let mut failure = None;
    let row = throttled_run(algorithm_label(kind), samples, budget, |s| {
        if let Err(e) = det.process(s) {
            failure.get_or_insert(e);
        }
    });
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(row),
    }
}

/// Every (algorithm, budget) pair, budgets in the given order. Runs are
/// sequential so no two throttled workloads overlap.
pub fn run_budget_sweep(
    algorithms: &[DetectorKind],
    budgets: &[CpuBudget],
    params: &DetectorParams,
    samples: &[Sample],
) -> Result<Vec<LatencyRow>, BenchError> {
    let mut rows = Vec::new();
    for &b in budgets {
        for &kind in algorithms {
            let samples = samples.to_vec();
            let params = params.clone();
            // Dedicated thread per point, as with a container per run.
            let row = std::thread::spawn(move || run_latency(kind, &params, &samples, b))
                .join()
                .map_err(|_| BenchError::WorkerPanicked)??;
            info!(algorithm = %row.algorithm, budget = b.get(), mean_ms = row.mean_ms, "budget point done");
            rows.push(row);
        }
    }
    Ok(rows)
}
