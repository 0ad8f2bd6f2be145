use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use zerops_core::collector::{
    metric_header, run_collector, CollectError, CollectorConfig, OverheadReport, RawSnapshot,
    SnapshotSource, SourceKind, StopSignal,
};
use zerops_core::stream::csv::encode_csv;
use zerops_core::collector::snapshot::write_trace;
use zerops_core::stream::{open_sink, Endpoint, Tags};

use crate::{parse_duration, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Binary,
    Csv,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Collection interval, 100ms to 10s.
    #[arg(long, default_value = "500ms", value_parser = parse_duration)]
    interval: Duration,
    /// Output endpoint: file:PATH, tcp-listen:HOST:PORT, tcp-connect:HOST:PORT or stdio.
    #[arg(long, default_value = "stdio")]
    out: String,
    #[arg(long, value_enum, default_value = "binary")]
    format: Format,
    /// Tags attached to every sample, e.g. host=edge-1,site=berlin.
    #[arg(long, default_value = "")]
    tags: String,
    /// Replay recorded raw counter snapshots (NDJSON) instead of reading /proc.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Record the raw counter snapshots read during this run (NDJSON).
    #[arg(long)]
    record_trace: Option<PathBuf>,
    /// Stop after this long; default runs until the source ends or the process is killed.
    #[arg(long, value_parser = parse_duration)]
    run_for: Option<Duration>,
    /// Append the run's overhead report as a CSV row.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Keeps every snapshot the wrapped source returns.
struct Recording<'a> {
    inner: &'a mut dyn SnapshotSource,
    seen: Vec<RawSnapshot>,
}

impl SnapshotSource for Recording<'_> {
    fn read(&mut self) -> Result<RawSnapshot, CollectError> {
        let s = self.inner.read()?;
        self.seen.push(s.clone());
        Ok(s)
    }
}

pub fn run(a: CollectArgs) -> Result<Outcome> {
    let tags: Tags = a.tags.parse().map_err(anyhow::Error::msg).context("--tags")?;
    let source = a.replay.clone().map_or(SourceKind::OsCounters, SourceKind::Replay);
    let mut config = CollectorConfig::new(a.interval, tags, source)?;
    if let Some(d) = a.run_for {
        config = config.with_run_for(d);
    }
    let endpoint: Endpoint = a.out.parse()?;
    let header = metric_header();
    let mut source = config.open_source()?;
    let mut rec = Recording { inner: source.as_mut(), seen: Vec::new() };
    let stop = StopSignal::new();

    let report = match a.format {
        Format::Binary => {
            let mut sink = open_sink(&endpoint, &header)?;
            let report = run_collector(&config, &mut rec, &stop, |s| sink.write(&s).and_then(|_| sink.flush()))?;
            sink.flush()?;
            report
        }
        Format::Csv => {
            let Endpoint::File(path) = &endpoint else {
                bail!("--format csv needs a file: endpoint");
            };
            let mut samples = Vec::new();
            let report = run_collector(&config, &mut rec, &stop, |s| {
                samples.push(s);
                Ok::<(), std::convert::Infallible>(())
            })?;
            std::fs::write(path, encode_csv(&header, &samples)?).with_context(|| path.display().to_string())?;
            report
        }
    };
    if let Some(path) = &a.record_trace {
        write_trace(path, &rec.seen).with_context(|| path.display().to_string())?;
    }
    if let Some(path) = &a.report {
        write_overhead(path, &report)?;
    }
    eprintln!(
        "collected {} samples in {:.1}s, cpu {:.2}% of one core, peak rss {} KiB ({:?})",
        report.samples_emitted,
        report.wall_time.as_secs_f64(),
        report.cpu_self_fraction * 100.0,
        report.rss_bytes / 1024,
        report.stop_reason
    );
    Ok(Outcome::Ok)
}

fn write_overhead(path: &PathBuf, report: &OverheadReport) -> Result<()> {
    let fresh = !path.exists();
    let mut f = File::options().create(true).append(true).open(path).with_context(|| path.display().to_string())?;
    if fresh {
        writeln!(f, "{}", OverheadReport::CSV_HEADER)?;
    }
    writeln!(f, "{}", report.csv_row())?;
    Ok(())
}
