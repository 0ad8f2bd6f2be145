use std::collections::BTreeMap;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{Receiver, TryRecvError};
use std::time::{Duration, Instant};

use tracing::{info, warn};

use super::{reconcile, Object, OrchestratorError, PlacementPlan, Registry, Workload, WorkloadKey};
use crate::collector::StopSignal;

/// A change to the desired state.
#[derive(Debug, Clone)]
pub enum Mutation {
    Register(Object),
    Update(Object),
    Upsert(Object),
    Delete { kind: &'static str, name: String },
    /// Swap in a whole registry, e.g. after re-reading an object directory.
    Replace(Registry),
}

/// How created workloads are run.
#[derive(Debug)]
pub enum WorkloadRunner {
    /// Records rendered commands without starting anything.
    DryRun { log: Vec<String> },
    /// Runs each command with `sh -c` as a local child process.
    Spawn { children: BTreeMap<WorkloadKey, Child> },
}

impl WorkloadRunner {
    pub fn dry_run() -> Self {
        WorkloadRunner::DryRun { log: Vec::new() }
    }

    pub fn spawn() -> Self {
        WorkloadRunner::Spawn { children: BTreeMap::new() }
    }

    fn start(&mut self, w: &Workload) -> Result<(), OrchestratorError> {
        match self {
            WorkloadRunner::DryRun { log } => log.push(format!("create {} on {}: {}", w.key(), w.node, w.command)),
            WorkloadRunner::Spawn { children } => {
                let child = Command::new("sh")
                    .arg("-c")
                    .arg(&w.command)
                    .stdin(Stdio::null())
                    .spawn()
                    .map_err(|source| OrchestratorError::Spawn { key: w.key().to_string(), source })?;
                children.insert(w.key(), child);
            }
        }
        Ok(())
    }

    fn stop(&mut self, w: &Workload) {
        match self {
            WorkloadRunner::DryRun { log } => log.push(format!("delete {} on {}", w.key(), w.node)),
            WorkloadRunner::Spawn { children } => {
                if let Some(mut child) = children.remove(&w.key()) {
                    if let Err(e) = child.kill() {
                        warn!(key = %w.key(), error = %e, "workload already gone");
                    }
                    let _ = child.wait();
                }
            }
        }
    }

    pub fn stop_all(&mut self) {
        if let WorkloadRunner::Spawn { children } = self {
            for (_, mut child) in std::mem::take(children) {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

/// Single-threaded reconciliation over a serialized stream of mutations.
#[derive(Debug)]
pub struct Controller {
    registry: Registry,
    running: BTreeMap<WorkloadKey, Workload>,
    runner: WorkloadRunner,
}

impl Controller {
    pub fn new(registry: Registry, runner: WorkloadRunner) -> Self {
        Self { registry, running: BTreeMap::new(), runner }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn running(&self) -> &BTreeMap<WorkloadKey, Workload> {
        &self.running
    }

    pub fn runner(&self) -> &WorkloadRunner {
        &self.runner
    }

    pub fn apply(&mut self, m: Mutation) -> Result<(), OrchestratorError> {
        match m {
            Mutation::Register(o) => self.registry.register(o),
            Mutation::Upsert(o) => self.registry.upsert(o),
            Mutation::Update(o) => match o {
                Object::DataSource(x) => self.registry.update_source(x),
                Object::AnalysisStep(x) => self.registry.update_step(x),
                Object::Node(x) => self.registry.update_node(x),
            },
            Mutation::Delete { kind, name } => match kind {
                "DataSource" => self.registry.delete_source(&name).map(drop),
                "AnalysisStep" => self.registry.delete_step(&name).map(drop),
                "Node" => self.registry.delete_node(&name).map(drop),
                _ => Err(OrchestratorError::Unknown { kind, name }),
            },
            Mutation::Replace(r) => {
                self.registry = r;
                Ok(())
            }
        }
    }

    /// Computes a plan and carries it out. A create that fails to spawn is
    /// left out of the running set so the next reconcile retries it.
    pub fn reconcile(&mut self) -> PlacementPlan {
        let plan = reconcile(&self.registry, &self.running);
        for w in &plan.delete {
            self.runner.stop(w);
            self.running.remove(&w.key());
        }
        for w in &plan.create {
            match self.runner.start(w) {
                Ok(()) => {
                    self.running.insert(w.key(), w.clone());
                }
                Err(e) => warn!(error = %e, "workload start failed"),
            }
        }
        for u in &plan.unschedulable {
            warn!(step = %u.step, source = %u.source, reason = %u.reason, "unschedulable");
        }
        if !plan.diff_is_empty() {
            info!(created = plan.create.len(), deleted = plan.delete.len(), "reconciled");
        }
        plan
    }

    /// Applies queued mutations and reconciles every `tick` until stopped or
    /// the sender hangs up. Each plan is handed to `on_plan`.
    pub fn run(
        &mut self,
        mutations: &Receiver<Mutation>,
        tick: Duration,
        stop: &StopSignal,
        mut on_plan: impl FnMut(&PlacementPlan),
    ) {
        let mut next = Instant::now();
        loop {
            let mut disconnected = false;
            loop {
                match mutations.try_recv() {
                    Ok(m) => {
                        if let Err(e) = self.apply(m) {
                            warn!(error = %e, "mutation rejected");
                        }
                    }
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => {
                        disconnected = true;
                        break;
                    }
                }
            }
            let plan = self.reconcile();
            on_plan(&plan);
            if disconnected {
                return;
            }
            next += tick;
            if stop.wait_until(next) {
                return;
            }
        }
    }
}

impl Drop for Controller {
    fn drop(&mut self) {
        self.runner.stop_all();
    }
}
