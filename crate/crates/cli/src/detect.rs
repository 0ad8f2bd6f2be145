use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use zerops_core::engine::EventBus;
use zerops_core::iftm::{AnomalyEvent, AnyDetector, DetectorKind, DetectorParams};
use zerops_core::rca::{verdict, Correlator, CorrelatorConfig, DependencyModel};
use zerops_core::repo::{warm_start, Checkpointer, ModelKey, ModelRepo};
use zerops_core::stream::{open_source, Endpoint};

use crate::{parse_duration, Outcome};

/// Opens a file for writing, or stdout for `-`.
pub fn output(path: &str) -> Result<Box<dyn Write>> {
    Ok(if path == "-" {
        Box::new(std::io::stdout().lock())
    } else {
        Box::new(BufWriter::new(File::create(path).with_context(|| path.to_string())?))
    })
}

pub fn write_ndjson<T: serde::Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_ndjson<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = BufReader::new(File::open(path).with_context(|| path.display().to_string())?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

enum EventSink {
    File(Box<dyn Write>),
    Topic(EventBus, String),
}

impl EventSink {
    fn open(target: &str, journal: Option<&Path>) -> Result<Self> {
        match target.strip_prefix("topic:") {
            Some(topic) => {
                let Some(dir) = journal else {
                    bail!("--events {target} needs --bus-journal");
                };
                Ok(EventSink::Topic(EventBus::with_journal(dir)?, topic.to_string()))
            }
            None => Ok(EventSink::File(output(target)?)),
        }
    }

    fn emit(&mut self, ev: &AnomalyEvent) -> Result<()> {
        match self {
            EventSink::File(w) => {
                write_ndjson(w.as_mut(), ev)?;
                w.flush()?;
            }
            EventSink::Topic(bus, topic) => {
                bus.publish(topic, ev)?;
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        match self {
            EventSink::File(w) => w.flush()?,
            EventSink::Topic(bus, _) => bus.flush()?,
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// birch, arima or rnn.
    #[arg(long)]
    algo: DetectorKind,
    /// Input endpoint: file:PATH, tcp-listen:HOST:PORT, tcp-connect:HOST:PORT or stdio.
    #[arg(long = "in")]
    input: String,
    /// Where anomaly events go: an NDJSON path, `-` for stdout, or `topic:NAME`
    /// to publish on the event bus journaled under --bus-journal.
    #[arg(long, default_value = "-")]
    events: String,
    /// Journal directory used with `--events topic:NAME`.
    #[arg(long)]
    bus_journal: Option<PathBuf>,
    /// Detector parameters, e.g. alpha=0.1,c=3,T=3,forget=0.99.
    #[arg(long, default_value = "")]
    params: String,
    /// Model repository for warm starts and checkpoints.
    #[arg(long)]
    repo: Option<PathBuf>,
    /// Analysis step part of the model key (step/component/detector); loads
    /// the latest stored model for each component from --repo.
    #[arg(long)]
    warm_start: Option<String>,
    #[arg(long, default_value = "60s", value_parser = parse_duration)]
    checkpoint: Duration,
}

pub fn run_detect(a: DetectArgs) -> Result<Outcome> {
    let params = DetectorParams::parse(&a.params)?;
    let endpoint: Endpoint = a.input.parse()?;
    let source = open_source(&endpoint)?;
    let dim = source.header().len();
    let repo = a.repo.as_ref().map(|d| Arc::new(ModelRepo::open(d)));
    let step = a.warm_start.clone().unwrap_or_else(|| "detect".into());
    let mut sink = EventSink::open(&a.events, a.bus_journal.as_deref())?;
    let mut detectors: BTreeMap<String, (AnyDetector, Option<Checkpointer>)> = BTreeMap::new();
    let (mut samples, mut flagged) = (0u64, 0u64);
    for sample in source {
        let sample = sample?;
        let component = sample.component();
        if !detectors.contains_key(&component.0) {
            let key = ModelKey::new(&step, &component.0, a.algo);
            let warm = match (&repo, &a.warm_start) {
                (Some(r), Some(_)) => warm_start(r, &key).map(|(_, d)| d).filter(|d| d.dimension() == dim),
                _ => None,
            };
            let det = match warm {
                Some(d) => d,
                None => AnyDetector::new(a.algo, component.clone(), dim, &params)?,
            };
            let cp = repo.clone().map(|r| Checkpointer::spawn(r, key, a.checkpoint));
            detectors.insert(component.0.clone(), (det, cp));
        }
        let (det, cp) = detectors.get_mut(&component.0).expect("inserted above");
        samples += 1;
        if let Some(ev) = det.detect(&sample)? {
            flagged += 1;
            sink.emit(&ev)?;
        }
        if let Some(cp) = cp.as_mut() {
            cp.offer(det);
        }
    }
    for (_, (det, cp)) in detectors {
        if let Some(cp) = cp {
            cp.finish(Some(&det));
        }
    }
    sink.flush()?;
    eprintln!("{samples} samples, {flagged} anomalies");
    Ok(Outcome::Ok)
}

#[derive(Debug, Args)]
pub struct RcaArgs {
    /// Anomaly events as NDJSON.
    #[arg(long)]
    events: PathBuf,
    /// Dependency model as NDJSON; no dependencies if omitted.
    #[arg(long)]
    deps: Option<PathBuf>,
    /// Where verdicts go as NDJSON; `-` for stdout.
    #[arg(long, default_value = "-")]
    out: String,
    /// Where closed incidents go as NDJSON.
    #[arg(long)]
    incidents: Option<String>,
    #[arg(long, default_value = "30s", value_parser = parse_duration)]
    gap: Duration,
    #[arg(long, default_value = "5s", value_parser = parse_duration)]
    lateness: Duration,
}

pub fn run_rca(a: RcaArgs) -> Result<Outcome> {
    let deps = match &a.deps {
        Some(p) => DependencyModel::load(p).with_context(|| p.display().to_string())?,
        None => DependencyModel::new(),
    };
    let events: Vec<AnomalyEvent> = read_ndjson(&a.events)?;
    let mut corr = Correlator::new(CorrelatorConfig { gap: a.gap, lateness: a.lateness });
    let mut closed = Vec::new();
    for ev in events {
        closed.extend(corr.ingest(ev));
    }
    closed.extend(corr.flush());
    let mut out = output(&a.out)?;
    let mut inc_out = a.incidents.as_deref().map(output).transpose()?;
    for inc in &closed {
        write_ndjson(&mut out, &verdict(inc, &deps))?;
        if let Some(w) = inc_out.as_mut() {
            write_ndjson(w, inc)?;
        }
    }
    out.flush()?;
    if let Some(w) = inc_out.as_mut() {
        w.flush()?;
    }
    eprintln!("{} incidents, {} late events dropped", closed.len(), corr.dropped_late());
    Ok(Outcome::Ok)
}
