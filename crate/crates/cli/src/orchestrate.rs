use std::path::PathBuf;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use anyhow::Result;
use clap::Args;
use zerops_core::collector::StopSignal;
use zerops_core::orchestrator::{Controller, Mutation, Registry, WorkloadRunner};

use crate::detect::{output, write_ndjson};
use crate::{parse_duration, Outcome};

#[derive(Debug, Args)]
pub struct OrchestrateArgs {
    /// Directory of NDJSON object files (kind: DataSource, AnalysisStep, Node).
    #[arg(long)]
    objects: PathBuf,
    /// Record rendered commands instead of spawning workloads.
    #[arg(long)]
    dry_run: bool,
    #[arg(long, default_value = "2s", value_parser = parse_duration)]
    tick: Duration,
    /// Reconcile once and exit.
    #[arg(long)]
    once: bool,
    /// Keep reconciling for this long, re-reading the object directory every tick.
    #[arg(long, value_parser = parse_duration)]
    run_for: Option<Duration>,
    /// Where plan diffs go as NDJSON; `-` for stdout.
    #[arg(long, default_value = "-")]
    plan_out: String,
}

pub fn run(a: OrchestrateArgs) -> Result<Outcome> {
    let registry = Registry::load_dir(&a.objects)?;
    let runner = if a.dry_run { WorkloadRunner::dry_run() } else { WorkloadRunner::spawn() };
    let mut controller = Controller::new(registry, runner);
    let mut out = output(&a.plan_out)?;
    let mut last_unschedulable = 0;

    if a.once || a.run_for.is_none() {
        let plan = controller.reconcile();
        for line in plan.lines() {
            write_ndjson(&mut out, &line)?;
        }
        last_unschedulable = plan.unschedulable.len();
    } else {
        let deadline = Instant::now() + a.run_for.unwrap_or_default();
        let (tx, rx) = mpsc::channel();
        let stop = StopSignal::new();
        let (dir, tick, watch_stop) = (a.objects.clone(), a.tick, stop.clone());
        let watcher = std::thread::spawn(move || {
            let mut next = Instant::now() + tick;
            while !watch_stop.wait_until(next.min(deadline)) && Instant::now() < deadline {
                match Registry::load_dir(&dir) {
                    Ok(r) => {
                        if tx.send(Mutation::Replace(r)).is_err() {
                            break;
                        }
                    }
                    Err(e) => tracing::warn!(error = %e, "object directory unreadable, keeping last state"),
                }
                next += tick;
            }
        });
        let mut write_err = None;
        controller.run(&rx, a.tick, &stop, |plan| {
            last_unschedulable = plan.unschedulable.len();
            for line in plan.lines() {
                if let Err(e) = write_ndjson(&mut out, &line) {
                    write_err.get_or_insert(e);
                }
            }
        });
        stop.stop();
        let _ = watcher.join();
        if let Some(e) = write_err {
            return Err(e);
        }
    }
    out.flush()?;
    if let WorkloadRunner::DryRun { log } = controller.runner() {
        for l in log {
            eprintln!("dry-run: {l}");
        }
    }
    eprintln!("{} workloads running, {} unschedulable", controller.running().len(), last_unschedulable);
    Ok(if last_unschedulable > 0 { Outcome::Infeasible } else { Outcome::Ok })
}
