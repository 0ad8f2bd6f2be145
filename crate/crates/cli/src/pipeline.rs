use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Result};
use clap::Args;
use zerops_core::collector::{CollectorConfig, SourceKind, StopSignal};
use zerops_core::iftm::{DetectorKind, DetectorParams};
use zerops_core::pipeline::{run_pipeline, PipelineConfig, PipelineInput};
use zerops_core::rca::CorrelatorConfig;
use zerops_core::stream::Tags;

use crate::{parse_duration, Outcome};

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Action catalogue (NDJSON).
    #[arg(long)]
    catalogue: PathBuf,
    /// Dependency model (NDJSON).
    #[arg(long)]
    deps: Option<PathBuf>,
    /// Replay a recorded sample stream instead of collecting live.
    #[arg(long)]
    replay: Option<String>,
    /// Live collection interval.
    #[arg(long, default_value = "500ms", value_parser = parse_duration)]
    interval: Duration,
    /// Live collection run length.
    #[arg(long, value_parser = parse_duration)]
    run_for: Option<Duration>,
    #[arg(long, default_value = "")]
    tags: String,
    #[arg(long, default_value = "arima")]
    algo: DetectorKind,
    #[arg(long, default_value = "")]
    params: String,
    /// Model repository for warm starts and checkpoints.
    #[arg(long)]
    repo: Option<PathBuf>,
    #[arg(long, default_value = "60s", value_parser = parse_duration)]
    checkpoint: Duration,
    /// Event journal directory.
    #[arg(long)]
    journal: Option<PathBuf>,
    #[arg(long, default_value = "30s", value_parser = parse_duration)]
    gap: Duration,
    #[arg(long, default_value = "5s", value_parser = parse_duration)]
    lateness: Duration,
}

pub fn run(a: PipelineArgs) -> Result<Outcome> {
    let input = match &a.replay {
        Some(ep) => PipelineInput::Replay(ep.parse()?),
        None => {
            let Some(run_for) = a.run_for else {
                bail!("live collection needs --run-for (or use --replay)");
            };
            let tags: Tags = a.tags.parse().map_err(anyhow::Error::msg)?;
            PipelineInput::Collect(CollectorConfig::new(a.interval, tags, SourceKind::OsCounters)?.with_run_for(run_for))
        }
    };
    let mut cfg = PipelineConfig::new(input, a.algo, &a.catalogue);
    cfg.params = DetectorParams::parse(&a.params)?;
    cfg.dependencies = a.deps;
    cfg.repo = a.repo;
    cfg.checkpoint_period = a.checkpoint;
    cfg.journal = a.journal;
    cfg.correlator = CorrelatorConfig { gap: a.gap, lateness: a.lateness };
    let report = run_pipeline(&cfg, &StopSignal::new())?;
    let summary = serde_json::json!({
        "samples": report.samples,
        "anomalies": report.anomalies,
        "incidents": report.incidents.len(),
        "verdicts": report.verdicts,
        "actions": report.actions,
        "dropped_late": report.dropped_late,
        "checkpoints": report.checkpoints_stored,
    });
    println!("{summary}");
    Ok(Outcome::Ok)
}
