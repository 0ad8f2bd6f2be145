//! One-process wiring of collection, detection, root-cause ranking and
//! remediation matching, connected by bounded channels and the event bus.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded as channel, Receiver, Sender};
use thiserror::Error;
use tracing::{info, warn};

use crate::collector::{run_collector, CollectError, CollectorConfig, StopSignal};
use crate::engine::{
    recommend, BusError, Catalogue, CatalogueError, EngineError, EventBus, RecommendedAction, TOPIC_ANOMALIES,
    TOPIC_INCIDENTS, TOPIC_VERDICTS,
};
use crate::iftm::{AnomalyEvent, AnyDetector, DetectError, DetectorKind, DetectorParams};
use crate::rca::{verdict, Correlator, CorrelatorConfig, DependencyModel, Incident, RcaError, RootCauseVerdict};
use crate::repo::{warm_start, Checkpointer, ModelKey, ModelRepo};
use crate::stream::{open_source, Endpoint, MetricHeader, Sample, TransportError, DEFAULT_QUEUE_CAPACITY};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("catalogue {path}: {source}")]
    Catalogue { path: PathBuf, source: CatalogueError },
    #[error("dependency model {path}: {source}")]
    Dependencies { path: PathBuf, source: RcaError },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("event journal {path}: {source}")]
    Journal { path: PathBuf, source: std::io::Error },
    #[error("pipeline stage {0} panicked")]
    StagePanicked(&'static str),
}

#[derive(Debug, Clone)]
pub enum PipelineInput {
    /// Live collection until the run length elapses or the stop signal fires.
    Collect(CollectorConfig),
    /// Replays a recorded sample stream as fast as it can be processed.
    Replay(Endpoint),
    Samples(MetricHeader, Vec<Sample>),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: PipelineInput,
    pub detector: DetectorKind,
    pub params: DetectorParams,
    /// `None` means no known dependencies.
    pub dependencies: Option<PathBuf>,
    pub catalogue: PathBuf,
    pub repo: Option<PathBuf>,
    pub step_name: String,
    pub checkpoint_period: Duration,
    pub journal: Option<PathBuf>,
    pub correlator: CorrelatorConfig,
    pub queue_capacity: usize,
}

impl PipelineConfig {
    pub fn new(input: PipelineInput, detector: DetectorKind, catalogue: impl Into<PathBuf>) -> Self {
        Self {
            input,
            detector,
            params: DetectorParams::default(),
            dependencies: None,
            catalogue: catalogue.into(),
            repo: None,
            step_name: "pipeline".into(),
            checkpoint_period: Duration::from_secs(60),
            journal: None,
            correlator: CorrelatorConfig::default(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineReport {
    pub samples: u64,
    pub anomalies: u64,
    pub incidents: Vec<Incident>,
    pub verdicts: Vec<RootCauseVerdict>,
    pub actions: Vec<RecommendedAction>,
    pub dropped_late: u64,
    pub checkpoints_stored: u64,
    pub checkpoints_failed: u64,
    pub warm_started: Vec<String>,
}

enum RcaMsg {
    Event(AnomalyEvent),
    Advance(u64),
}

/// Runs the pipeline to completion and returns what each stage produced.
pub fn run_pipeline(config: &PipelineConfig, stop: &StopSignal) -> Result<PipelineReport, PipelineError> {
    let catalogue = Catalogue::load(&config.catalogue)
        .map_err(|source| PipelineError::Catalogue { path: config.catalogue.clone(), source })?;
    let deps = match &config.dependencies {
        Some(p) => DependencyModel::load(p).map_err(|source| PipelineError::Dependencies { path: p.clone(), source })?,
        None => DependencyModel::new(),
    };
    let bus = match &config.journal {
        Some(dir) => EventBus::with_journal(dir).map_err(|source| PipelineError::Journal { path: dir.clone(), source })?,
        None => EventBus::new(),
    };
    let repo = config.repo.as_ref().map(|d| Arc::new(ModelRepo::open(d)));

    let (sample_tx, sample_rx) = channel::<Sample>(config.queue_capacity.max(1));
    let (rca_tx, rca_rx) = channel::<RcaMsg>(1024);

    let (header, source_stage) = spawn_source_stage(&config.input, sample_tx, stop)?;
    let detect_stage = {
        let bus = bus.clone();
        let cfg = config.clone();
        let repo = repo.clone();
        thread::Builder::new()
            .name("pipeline-detect".into())
            .spawn(move || detect_stage(&cfg, header.len(), sample_rx, rca_tx, &bus, repo))
            .expect("spawn detector stage")
    };
    let rca_stage = {
        let bus = bus.clone();
        let corr = config.correlator;
        thread::Builder::new()
            .name("pipeline-rca".into())
            .spawn(move || rca_stage(corr, &deps, &catalogue, rca_rx, &bus))
            .expect("spawn rca stage")
    };

    // Drain in stage order.
    let source_result = source_stage.join().map_err(|_| PipelineError::StagePanicked("source"))?;
    let detect_result = detect_stage.join().map_err(|_| PipelineError::StagePanicked("detect"))?;
    let rca_result = rca_stage.join().map_err(|_| PipelineError::StagePanicked("rca"))?;
    bus.flush().map_err(|source| PipelineError::Journal { path: config.journal.clone().unwrap_or_default(), source })?;

    let samples = source_result?;
    let mut report = detect_result?;
    let (incidents, verdicts, actions, dropped_late) = rca_result?;
    report.samples = samples;
    report.incidents = incidents;
    report.verdicts = verdicts;
    report.actions = actions;
    report.dropped_late = dropped_late;
    info!(
        samples = report.samples,
        anomalies = report.anomalies,
        incidents = report.incidents.len(),
        actions = report.actions.len(),
        "pipeline finished"
    );
    Ok(report)
}

type SourceHandle = thread::JoinHandle<Result<u64, PipelineError>>;

fn spawn_source_stage(
    input: &PipelineInput,
    tx: Sender<Sample>,
    stop: &StopSignal,
) -> Result<(MetricHeader, SourceHandle), PipelineError> {
    let builder = thread::Builder::new().name("pipeline-source".into());
    let handle = match input.clone() {
        PipelineInput::Samples(header, samples) => {
            let h = builder
                .spawn(move || {
                    let mut n = 0;
                    for s in samples {
                        if tx.send(s).is_err() {
                            break;
                        }
                        n += 1;
                    }
                    Ok(n)
                })
                .expect("spawn source stage");
            (header, h)
        }
        PipelineInput::Replay(endpoint) => {
            let source = open_source(&endpoint)?;
            let header = source.header().clone();
            let h = builder
                .spawn(move || {
                    let mut n = 0;
                    for s in source {
                        if tx.send(s?).is_err() {
                            break;
                        }
                        n += 1;
                    }
                    Ok(n)
                })
                .expect("spawn source stage");
            (header, h)
        }
        PipelineInput::Collect(cfg) => {
            let stop = stop.clone();
            let mut src = cfg.open_source()?;
            let h = builder
                .spawn(move || {
                    let report = run_collector(&cfg, src.as_mut(), &stop, |s| {
                        tx.send(s).map_err(|_| "detector stage hung up")
                    })?;
                    Ok(report.samples_emitted)
                })
                .expect("spawn source stage");
            (crate::collector::metric_header(), h)
        }
    };
    Ok(handle)
}

struct ComponentState {
    detector: AnyDetector,
    checkpoint: Option<Checkpointer>,
}

fn detect_stage(
    cfg: &PipelineConfig,
    dim: usize,
    rx: Receiver<Sample>,
    rca: Sender<RcaMsg>,
    bus: &EventBus,
    repo: Option<Arc<ModelRepo>>,
) -> Result<PipelineReport, PipelineError> {
    let mut states: BTreeMap<String, ComponentState> = BTreeMap::new();
    let mut report = PipelineReport::default();
    let mut last_advance = 0u64;
    let mut failure = None;
    for sample in rx {
        let component = sample.component();
        if !states.contains_key(&component.0) {
            let key = ModelKey::new(&cfg.step_name, &component.0, cfg.detector);
            let warm = repo.as_deref().and_then(|r| warm_start(r, &key)).filter(|(_, d)| d.dimension() == dim);
            let detector = match warm {
                Some((v, d)) => {
                    info!(component = %component, version = v, "warm start");
                    report.warm_started.push(component.0.clone());
                    d
                }
                None => AnyDetector::new(cfg.detector, component.clone(), dim, &cfg.params)?,
            };
            let checkpoint = repo.clone().map(|r| Checkpointer::spawn(r, key, cfg.checkpoint_period));
            states.insert(component.0.clone(), ComponentState { detector, checkpoint });
        }
        let st = states.get_mut(&component.0).expect("inserted above");
        match st.detector.detect(&sample) {
            Ok(Some(ev)) => {
                report.anomalies += 1;
                bus.publish(TOPIC_ANOMALIES, &ev)?;
                if rca.send(RcaMsg::Event(ev)).is_err() {
                    break;
                }
            }
            Ok(None) => {}
            Err(e) => {
                warn!(component = %component, error = %e, "detector rejected sample");
                failure.get_or_insert(e);
                break;
            }
        }
        if let Some(cp) = st.checkpoint.as_mut() {
            cp.offer(&st.detector);
        }
        if sample.timestamp >= last_advance.saturating_add(1_000_000_000) {
            last_advance = sample.timestamp;
            if rca.send(RcaMsg::Advance(sample.timestamp)).is_err() {
                break;
            }
        }
    }
    drop(rca);
    for (_, st) in states {
        if let Some(cp) = st.checkpoint {
            let (ok, failed) = cp.finish(Some(&st.detector));
            report.checkpoints_stored += ok;
            report.checkpoints_failed += failed;
        }
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(report),
    }
}

type RcaOutput = (Vec<Incident>, Vec<RootCauseVerdict>, Vec<RecommendedAction>, u64);

fn rca_stage(
    config: CorrelatorConfig,
    deps: &DependencyModel,
    catalogue: &Catalogue,
    rx: Receiver<RcaMsg>,
    bus: &EventBus,
) -> Result<RcaOutput, PipelineError> {
    let mut corr = Correlator::new(config);
    let mut out: RcaOutput = (Vec::new(), Vec::new(), Vec::new(), 0);
    let handle = |closed: Vec<Incident>, out: &mut RcaOutput| -> Result<(), PipelineError> {
        for inc in closed {
            bus.publish(TOPIC_INCIDENTS, &inc)?;
            let v = verdict(&inc, deps);
            bus.publish(TOPIC_VERDICTS, &v)?;
            if let Some(action) = recommend(catalogue, &inc, &v, Some(bus))? {
                out.2.push(action);
            }
            out.0.push(inc);
            out.1.push(v);
        }
        Ok(())
    };
    for msg in rx {
        let closed = match msg {
            RcaMsg::Event(ev) => corr.ingest(ev),
            RcaMsg::Advance(t) => corr.advance(t),
        };
        handle(closed, &mut out)?;
    }
    let rest = corr.flush();
    handle(rest, &mut out)?;
    out.3 = corr.dropped_late();
    Ok(out)
}

/// Reads a topic journal written by the event bus.
pub fn read_journal(path: &Path) -> std::io::Result<Vec<serde_json::Value>> {
    use std::io::BufRead;
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

/// Checks journal causality: every action's incident has an earlier verdict,
/// and every verdict's incident contains only anomalies published before it.
pub fn check_causal_order(journal_dir: &Path) -> Result<(), String> {
    let load = |topic: &str| -> Result<Vec<serde_json::Value>, String> {
        let p = journal_dir.join(format!("{topic}.ndjson"));
        if !p.exists() {
            return Ok(Vec::new());
        }
        read_journal(&p).map_err(|e| format!("{}: {e}", p.display()))
    };
    let anomalies = load(TOPIC_ANOMALIES)?;
    let incidents = load(TOPIC_INCIDENTS)?;
    let verdicts = load(TOPIC_VERDICTS)?;
    let actions = load(crate::engine::TOPIC_ACTIONS)?;
    let seq = |v: &serde_json::Value| v["seq"].as_u64().unwrap_or(u64::MAX);

    let mut verdict_seq: BTreeMap<u64, u64> = BTreeMap::new();
    for v in &verdicts {
        let id = v["incident_id"].as_u64().ok_or("verdict without incident_id")?;
        verdict_seq.insert(id, seq(v));
    }
    for a in &actions {
        let id = a["incident_id"].as_u64().ok_or("action without incident_id")?;
        match verdict_seq.get(&id) {
            Some(&vs) if vs < seq(a) => {}
            _ => return Err(format!("action for incident {id} has no earlier verdict")),
        }
    }
    for inc in &incidents {
        let id = inc["id"].as_u64().ok_or("incident without id")?;
        let vs = *verdict_seq.get(&id).ok_or_else(|| format!("incident {id} has no verdict"))?;
        let events = inc["events"].as_object().ok_or("incident without events")?;
        for ev in events.values().flat_map(|l| l.as_array().into_iter().flatten()) {
            let matching = anomalies.iter().find(|a| {
                a["component"] == ev["component"] && a["ts_ns"] == ev["ts_ns"] && seq(a) < vs
            });
            if matching.is_none() {
                return Err(format!("incident {id} includes an anomaly not journaled before its verdict"));
            }
        }
    }
    if !actions.is_empty() && anomalies.is_empty() {
        return Err("actions without anomalies".into());
    }
    Ok(())
}

/// Two-component fault replay: a root component and a dependent one whose
/// fault starts `lead` samples later. Used for demos and end-to-end checks.
pub mod scenario {
    use crate::bench::{generate_dataset, Injection, SyntheticSpec};
    use crate::rca::{DependencyKind, DependencyModel};
    use crate::stream::{MetricHeader, Sample};

    #[derive(Debug, Clone, PartialEq)]
    pub struct FaultScenario {
        pub seed: u64,
        pub samples: usize,
        pub root: String,
        pub dependent: String,
        /// `None` produces a clean replay.
        pub onset: Option<usize>,
        pub lead: usize,
        pub duration: usize,
        pub metrics: Vec<usize>,
        pub shift_sigma: f64,
    }

    impl FaultScenario {
        pub fn new(seed: u64) -> Self {
            Self {
                seed,
                samples: 1200,
                root: "db".into(),
                dependent: "app".into(),
                onset: Some(800),
                lead: 2,
                duration: 20,
                metrics: vec![3, 17],
                shift_sigma: 10.0,
            }
        }

        pub fn clean(mut self) -> Self {
            self.onset = None;
            self
        }

        fn component(&self, name: &str, seed: u64, onset: Option<usize>) -> Vec<Sample> {
            let mut spec = SyntheticSpec::new(self.samples, seed);
            spec.component = name.to_string();
            if let Some(onset) = onset {
                spec = spec.with_injection(Injection {
                    onset,
                    duration: self.duration,
                    metrics: self.metrics.clone(),
                    shift_sigma: self.shift_sigma,
                });
            }
            generate_dataset(&spec).1
        }

        /// Samples of both components interleaved by timestamp, root first.
        pub fn samples(&self) -> (MetricHeader, Vec<Sample>) {
            let root = self.component(&self.root, self.seed, self.onset);
            let dep = self.component(&self.dependent, self.seed.wrapping_add(1), self.onset.map(|o| o + self.lead));
            let out = root.into_iter().zip(dep).flat_map(|(a, b)| [a, b]).collect();
            (crate::collector::metric_header(), out)
        }

        /// The dependent component depends on the root.
        pub fn dependencies(&self) -> DependencyModel {
            let mut m = DependencyModel::new();
            m.add_component(self.root.as_str()).add_component(self.dependent.as_str());
            m.add_edge(self.dependent.as_str(), self.root.as_str(), DependencyKind::Vertical)
                .expect("both components registered");
            m
        }
    }
}
