use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tracing::info;

use super::{busy_wait, BenchError};
use crate::collector::{overhead, run_collector, CollectorConfig, SourceKind, StopSignal};
use crate::iftm::{AnyDetector, DetectorKind, DetectorParams};
use crate::stream::{bounded, Sample, Tags, DEFAULT_QUEUE_CAPACITY};

#[derive(Debug, Clone)]
pub enum JitWorkload {
    Detector(DetectorKind, DetectorParams),
    /// Spins for the given time per sample; used to build infeasible setups.
    BusyLoop(Duration),
}

impl JitWorkload {
    pub fn label(&self) -> String {
        match self {
            JitWorkload::Detector(k, _) => k.to_string(),
            JitWorkload::BusyLoop(d) => format!("busy-{}ms", d.as_millis()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JitConfig {
    pub interval: Duration,
    pub duration: Duration,
    pub workload: JitWorkload,
    pub source: SourceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JitReport {
    pub interval: Duration,
    pub workload: String,
    pub samples: u64,
    pub max_depth: usize,
    /// Queue depth right after each send.
    pub backlog: Vec<usize>,
    /// Fractions of one core over the run's wall time.
    pub collector_cpu: f64,
    pub detector_cpu: f64,
    pub combined_cpu: f64,
    pub wall: Duration,
    pub pass: bool,
}

/// Feeds a live collector into a detector through a bounded queue.
///
/// Passes iff the queue never holds more than one sample, i.e. each sample
/// is consumed before the next one is produced.
pub fn run_jit_check(config: &JitConfig) -> Result<JitReport, BenchError> {
    let collector_cfg = CollectorConfig::new(config.interval, Tags::default().with("host", "jit"), config.source.clone())?
        .with_run_for(config.duration);
    let dim = crate::collector::METRIC_COUNT;
    let mut workload: Box<dyn FnMut(&Sample) + Send> = match &config.workload {
        JitWorkload::Detector(kind, params) => {
            let mut det = AnyDetector::new(*kind, "jit".into(), dim, params)?;
            Box::new(move |s| {
                let _ = det.process(s);
            })
        }
        JitWorkload::BusyLoop(d) => {
            let d = *d;
            Box::new(move |_| busy_wait(d))
        }
    };

    let (tx, rx) = bounded::<Sample>(DEFAULT_QUEUE_CAPACITY);
    let stats = tx.stats();
    let backlog = Arc::new(Mutex::new(Vec::new()));
    let start = Instant::now();

    let consumer = std::thread::Builder::new()
        .name("jit-detector".into())
        .spawn(move || {
            let cpu0 = overhead::thread_cpu_time();
            for s in rx {
                workload(&s);
            }
            overhead::thread_cpu_time().saturating_sub(cpu0)
        })
        .map_err(BenchError::Io)?;

    let log = backlog.clone();
    let report = std::thread::Builder::new()
        .name("jit-collector".into())
        .spawn(move || {
            let mut src = collector_cfg.open_source()?;
            let stop = StopSignal::new();
            let r = run_collector(&collector_cfg, src.as_mut(), &stop, |s| {
                tx.send(s).map_err(|_| "detector hung up")?;
                log.lock().unwrap_or_else(|e| e.into_inner()).push(tx.len());
                Ok::<(), &str>(())
            });
            drop(tx);
            r
        })
        .map_err(BenchError::Io)?
        .join()
        .map_err(|_| BenchError::WorkerPanicked)??;

    let detector_time = consumer.join().map_err(|_| BenchError::WorkerPanicked)?;
    let wall = start.elapsed();
    let collector_secs = report.cpu_self_fraction * report.wall_time.as_secs_f64();
    let wall_s = wall.as_secs_f64().max(f64::MIN_POSITIVE);
    let backlog = std::mem::take(&mut *backlog.lock().unwrap_or_else(|e| e.into_inner()));
    let max_depth = stats.max_depth();
    let out = JitReport {
        interval: config.interval,
        workload: config.workload.label(),
        samples: report.samples_emitted,
        max_depth,
        backlog,
        collector_cpu: collector_secs / wall_s,
        detector_cpu: detector_time.as_secs_f64() / wall_s,
        combined_cpu: (collector_secs + detector_time.as_secs_f64()) / wall_s,
        wall,
        pass: max_depth <= 1,
    };
    info!(
        workload = %out.workload,
        max_depth = out.max_depth,
        combined_cpu = out.combined_cpu,
        pass = out.pass,
        "just-in-time check done"
    );
    Ok(out)
}
