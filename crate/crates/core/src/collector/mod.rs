//! High-frequency host metrics collector.
//!
//! Snapshots raw counters at a fixed interval, derives a 28-metric sample
//! from each consecutive pair and forwards it without retaining history. The
//! loop measures its own CPU time and resident memory.

mod derive;
pub mod overhead;
pub mod snapshot;

use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;
use tracing::warn;

pub use derive::{derive_sample, metric_header, Derived, METRIC_COUNT, METRIC_NAMES};
pub use snapshot::{ProcFs, RawSnapshot, ReplaySource, SnapshotSource};

use crate::stream::{Sample, Tags};

pub const MIN_INTERVAL: Duration = Duration::from_millis(100);
pub const MAX_INTERVAL: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("cannot read {group} counters from {}: {source}", path.display())]
    Source {
        group: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {group} counters in {}: {reason}", path.display())]
    Parse {
        group: &'static str,
        path: PathBuf,
        reason: String,
    },
    #[error("replay trace exhausted")]
    Exhausted,
    #[error("elapsed time between snapshots must be positive")]
    NonPositiveElapsed,
    #[error("collection interval {0:?} outside [100ms, 10s]")]
    Interval(Duration),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    OsCounters,
    Replay(PathBuf),
}

#[derive(Debug, Clone)]
pub struct CollectorConfig {
    interval: Duration,
    pub tags: Tags,
    pub source: SourceKind,
    /// Stop on its own after this much wall time.
    pub run_for: Option<Duration>,
}

impl CollectorConfig {
    pub fn new(interval: Duration, tags: Tags, source: SourceKind) -> Result<Self, CollectError> {
        if !(MIN_INTERVAL..=MAX_INTERVAL).contains(&interval) {
            return Err(CollectError::Interval(interval));
        }
        Ok(Self { interval, tags, source, run_for: None })
    }

    pub fn with_run_for(mut self, duration: Duration) -> Self {
        self.run_for = Some(duration);
        self
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    pub fn open_source(&self) -> Result<Box<dyn SnapshotSource>, CollectError> {
        Ok(match &self.source {
            SourceKind::OsCounters => Box::new(ProcFs::default()),
            SourceKind::Replay(path) => Box::new(ReplaySource::open(path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Stopped,
    DurationElapsed,
    SourceExhausted,
    SourceFailed(String),
    SinkFailed(String),
}

#[derive(Debug, Clone)]
pub struct OverheadReport {
    pub interval: Duration,
    /// CPU time of the collection thread divided by wall time, as a fraction of one core.
    pub cpu_self_fraction: f64,
    /// Peak resident set size observed during the run.
    pub rss_bytes: u64,
    pub samples_emitted: u64,
    pub wall_time: Duration,
    pub stop_reason: StopReason,
}

impl OverheadReport {
    pub const CSV_HEADER: &'static str = "interval_ms,cpu_frac,rss_bytes,samples,wall_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.interval.as_millis(),
            self.cpu_self_fraction,
            self.rss_bytes,
            self.samples_emitted,
            self.wall_time.as_secs_f64()
        )
    }
}

/// Cooperative stop flag that also wakes sleepers.
#[derive(Clone, Default)]
pub struct StopSignal(Arc<(Mutex<bool>, Condvar)>);

impl fmt::Debug for StopSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("StopSignal").field(&self.is_stopped()).finish()
    }
}

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        let (lock, cvar) = &*self.0;
        *lock.lock().unwrap() = true;
        cvar.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        *self.0 .0.lock().unwrap()
    }

    /// Sleeps until `deadline`; returns true if stopped first.
    pub fn wait_until(&self, deadline: Instant) -> bool {
        let (lock, cvar) = &*self.0;
        let mut stopped = lock.lock().unwrap();
        loop {
            if *stopped {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            stopped = cvar.wait_timeout(stopped, deadline - now).unwrap().0;
        }
    }
}

/// Runs the collection loop until stopped, the configured duration elapses,
/// the source is exhausted or `emit` fails. The first sample is emitted one
/// interval after start, once two snapshots exist.
pub fn run_collector<E: fmt::Display>(
    config: &CollectorConfig,
    source: &mut dyn SnapshotSource,
    stop: &StopSignal,
    mut emit: impl FnMut(Sample) -> Result<(), E>,
) -> Result<OverheadReport, CollectError> {
    let interval = config.interval;
    let start = Instant::now();
    let cpu_start = overhead::thread_cpu_time();
    let mut rss_peak = overhead::current_rss_bytes().unwrap_or(0);
    let mut prev = source.read()?;
    let mut emitted = 0u64;
    let mut tick = 1u32;

    let stop_reason = loop {
        let deadline = start + interval * tick;
        if let Some(limit) = config.run_for {
            if deadline > start + limit {
                // idle out the remainder so wall time matches the requested run
                if stop.wait_until(start + limit) {
                    break StopReason::Stopped;
                }
                break StopReason::DurationElapsed;
            }
        }
        if stop.wait_until(deadline) {
            break StopReason::Stopped;
        }
        let cur = match source.read() {
            Ok(cur) => cur,
            Err(CollectError::Exhausted) => break StopReason::SourceExhausted,
            Err(e) => {
                warn!(error = %e, "collection failed");
                break StopReason::SourceFailed(e.to_string());
            }
        };
        let elapsed = Duration::from_nanos(cur.timestamp_ns.saturating_sub(prev.timestamp_ns));
        match derive_sample(&prev, &cur, elapsed, &config.tags) {
            Ok(derived) => {
                if let Err(e) = emit(derived.sample) {
                    warn!(error = %e, "sink failed; stopping collector");
                    break StopReason::SinkFailed(e.to_string());
                }
                emitted += 1;
            }
            Err(e) => warn!(error = %e, "skipping sample"),
        }
        prev = cur;
        tick += 1;
        if tick.is_multiple_of(16) {
            rss_peak = rss_peak.max(overhead::current_rss_bytes().unwrap_or(0));
        }
        // fell more than one interval behind: skip the missed ticks
        let now = Instant::now();
        if now > start + interval * tick + interval {
            tick = (now.duration_since(start).as_nanos() / interval.as_nanos()) as u32 + 1;
        }
    };

    let wall_time = start.elapsed();
    let cpu = overhead::thread_cpu_time().saturating_sub(cpu_start);
    rss_peak = rss_peak.max(overhead::current_rss_bytes().unwrap_or(0));
    Ok(OverheadReport {
        interval,
        cpu_self_fraction: cpu.as_secs_f64() / wall_time.as_secs_f64().max(1e-9),
        rss_bytes: rss_peak,
        samples_emitted: emitted,
        wall_time,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_trace(n: u64, step_ns: u64) -> Vec<RawSnapshot> {
        (0..n)
            .map(|i| {
                let mut s = RawSnapshot { timestamp_ns: 1_000_000_000 + i * step_ns, ..Default::default() };
                s.cpu.user = 5 * i;
                s.cpu.idle = 15 * i;
                s.mem.total = 1 << 30;
                s.mem.available = 1 << 29;
                s.net.rx_bytes = 100 * i;
                s
            })
            .collect()
    }

    #[test]
    fn interval_range_is_enforced() {
        assert!(CollectorConfig::new(Duration::from_millis(99), Tags::new(), SourceKind::OsCounters).is_err());
        assert!(CollectorConfig::new(Duration::from_millis(10_001), Tags::new(), SourceKind::OsCounters).is_err());
        assert!(CollectorConfig::new(Duration::from_millis(100), Tags::new(), SourceKind::OsCounters).is_ok());
        assert!(CollectorConfig::new(Duration::from_secs(10), Tags::new(), SourceKind::OsCounters).is_ok());
    }

    #[test]
    fn replay_run_emits_derived_samples_in_order() {
        let config = CollectorConfig::new(Duration::from_millis(100), Tags::new().with("host", "r1"), SourceKind::OsCounters)
            .unwrap();
        let mut source = ReplaySource::new(synthetic_trace(6, 100_000_000));
        let mut out = Vec::new();
        let report = run_collector(&config, &mut source, &StopSignal::new(), |s| {
            out.push(s);
            Ok::<_, String>(())
        })
        .unwrap();
        assert_eq!(report.stop_reason, StopReason::SourceExhausted);
        assert_eq!(report.samples_emitted, 5);
        assert_eq!(out.len(), 5);
        assert!(out.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert_eq!(out[0].values[0], 0.25);
        assert_eq!(out[0].values[13], 1000.0);
        assert_eq!(out[0].tags.get("host"), Some("r1"));
    }

    #[test]
    fn emission_count_matches_interval_arithmetic() {
        if !std::path::Path::new("/proc/stat").exists() {
            return;
        }
        let config = CollectorConfig::new(Duration::from_millis(100), Tags::new(), SourceKind::OsCounters)
            .unwrap()
            .with_run_for(Duration::from_secs(3));
        let mut source = config.open_source().unwrap();
        let mut n = 0;
        let report = run_collector(&config, source.as_mut(), &StopSignal::new(), |_| {
            n += 1;
            Ok::<_, String>(())
        })
        .unwrap();
        let expected = report.wall_time.as_secs_f64() / 0.1;
        assert!((report.samples_emitted as f64 - expected).abs() <= 1.0, "{report:?}");
        assert_eq!(n, report.samples_emitted);
        assert!(report.cpu_self_fraction >= 0.0);
        assert!(report.rss_bytes > 0);
    }

    #[test]
    fn sink_failure_stops_with_partial_report() {
        let config = CollectorConfig::new(Duration::from_millis(100), Tags::new(), SourceKind::OsCounters).unwrap();
        let mut source = ReplaySource::new(synthetic_trace(10, 100_000_000));
        let mut n = 0;
        let report = run_collector(&config, &mut source, &StopSignal::new(), |_| {
            n += 1;
            if n == 3 {
                Err("disk full")
            } else {
                Ok(())
            }
        })
        .unwrap();
        assert_eq!(report.samples_emitted, 2);
        assert_eq!(report.stop_reason, StopReason::SinkFailed("disk full".into()));
    }

    #[test]
    fn stop_signal_interrupts_sleep() {
        let stop = StopSignal::new();
        let s2 = stop.clone();
        let t = std::thread::spawn(move || s2.wait_until(Instant::now() + Duration::from_secs(30)));
        std::thread::sleep(Duration::from_millis(20));
        stop.stop();
        assert!(t.join().unwrap());
    }
}
