use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnalysisStep, DataSource, Node, Registry, Resources};

/// (step name, source name)
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkloadKey {
    pub step: String,
    pub source: String,
}

impl WorkloadKey {
    pub fn new(step: impl Into<String>, source: impl Into<String>) -> Self {
        Self { step: step.into(), source: source.into() }
    }
}

impl fmt::Display for WorkloadKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.step, self.source)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub step: String,
    pub source: String,
    pub node: String,
    pub command: String,
    pub resources: Resources,
}

impl Workload {
    pub fn key(&self) -> WorkloadKey {
        WorkloadKey::new(&self.step, &self.source)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unschedulable {
    pub step: String,
    pub source: String,
    pub reason: String,
}

/// Outcome of one reconcile.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlacementPlan {
    /// Every workload that should run after the plan is applied.
    pub assignments: BTreeMap<WorkloadKey, Workload>,
    pub create: Vec<Workload>,
    pub delete: Vec<Workload>,
    pub unschedulable: Vec<Unschedulable>,
}

/// One line of a plan dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum PlanLine {
    Create(Workload),
    Delete(Workload),
    Unschedulable(Unschedulable),
}

impl PlacementPlan {
    pub fn diff_is_empty(&self) -> bool {
        self.create.is_empty() && self.delete.is_empty()
    }

    pub fn lines(&self) -> Vec<PlanLine> {
        let deletes = self.delete.iter().cloned().map(PlanLine::Delete);
        let creates = self.create.iter().cloned().map(PlanLine::Create);
        let unsched = self.unschedulable.iter().cloned().map(PlanLine::Unschedulable);
        deletes.chain(creates).chain(unsched).collect()
    }

    /// Requests placed per node.
    pub fn usage(&self) -> BTreeMap<String, Resources> {
        let mut used: BTreeMap<String, Resources> = BTreeMap::new();
        for w in self.assignments.values() {
            let slot = used.entry(w.node.clone()).or_default();
            *slot = *slot + w.resources;
        }
        used
    }
}

/// Sources selected by the step, sorted by name.
pub fn match_sources<'a>(step: &AnalysisStep, registry: &'a Registry) -> Vec<&'a DataSource> {
    registry.sources().values().filter(|s| step.selects(s)).collect()
}

/// Picks a node for `(step, source)` and charges it against `allocatable`.
///
/// Region restriction filters candidates first. Then the hosting node is
/// preferred, then nodes in the source's region, then all others; within
/// each tier nodes are ordered by allocatable CPU descending, then name.
pub fn place(
    step: &AnalysisStep,
    source: &DataSource,
    nodes: &BTreeMap<String, Node>,
    allocatable: &mut BTreeMap<String, Resources>,
) -> Option<String> {
    let source_region = nodes.get(&source.node).map(|n| n.region.as_str());
    let mut candidates: Vec<(u8, std::cmp::Reverse<u64>, &str)> = nodes
        .values()
        .filter(|n| step.permits(n))
        .map(|n| {
            let tier = if n.name == source.node {
                0
            } else if Some(n.region.as_str()) == source_region {
                1
            } else {
                2
            };
            let free = allocatable.get(&n.name).map_or(0, |r| r.cpu_millis);
            (tier, std::cmp::Reverse(free), n.name.as_str())
        })
        .collect();
    candidates.sort();
    let chosen = candidates
        .into_iter()
        .map(|(_, _, name)| name)
        .find(|name| allocatable.get(*name).is_some_and(|free| step.resources.fits_in(free)))?;
    let free = allocatable.get_mut(chosen).expect("candidate has an allocatable entry");
    *free = *free - step.resources;
    Some(chosen.to_string())
}

/// Diffs the desired workloads against `running`.
///
/// A running workload is kept while its pair is still desired, its node still
/// exists and is permitted, its command and request are unchanged, and the
/// node still has room for it. Everything else is deleted and re-placed.
pub fn reconcile(registry: &Registry, running: &BTreeMap<WorkloadKey, Workload>) -> PlacementPlan {
    let nodes = registry.nodes();
    let mut allocatable: BTreeMap<String, Resources> = nodes.iter().map(|(n, d)| (n.clone(), d.capacity)).collect();
    let mut plan = PlacementPlan::default();

    let mut desired: Vec<(&AnalysisStep, &DataSource)> = Vec::new();
    for step in registry.steps().values() {
        for source in match_sources(step, registry) {
            desired.push((step, source));
        }
    }
    let wanted: BTreeMap<WorkloadKey, (&AnalysisStep, &DataSource)> =
        desired.iter().map(|&(st, so)| (WorkloadKey::new(&st.name, &so.name), (st, so))).collect();

    for (key, w) in running {
        let keep = wanted.get(key).is_some_and(|(step, source)| {
            let node_ok = nodes.get(&w.node).is_some_and(|n| step.permits(n));
            let same = w.command == step.render(source) && w.resources == step.resources;
            let fits = allocatable.get(&w.node).is_some_and(|free| w.resources.fits_in(free));
            node_ok && same && fits
        });
        if keep {
            let free = allocatable.get_mut(&w.node).expect("checked above");
            *free = *free - w.resources;
            plan.assignments.insert(key.clone(), w.clone());
        } else {
            plan.delete.push(w.clone());
        }
    }

    for (key, (step, source)) in &wanted {
        if plan.assignments.contains_key(key) {
            continue;
        }
        match place(step, source, nodes, &mut allocatable) {
            Some(node) => {
                let w = Workload {
                    step: step.name.clone(),
                    source: source.name.clone(),
                    node,
                    command: step.render(source),
                    resources: step.resources,
                };
                plan.create.push(w.clone());
                plan.assignments.insert(key.clone(), w);
            }
            None => plan.unschedulable.push(Unschedulable {
                step: step.name.clone(),
                source: source.name.clone(),
                reason: format!(
                    "no permitted node has {} m CPU and {} bytes free",
                    step.resources.cpu_millis, step.resources.memory_bytes
                ),
            }),
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::Selector;

    const GIB: u64 = 1 << 30;

    fn node(name: &str, region: &str, cpu: u64) -> Node {
        Node { name: name.into(), region: region.into(), capacity: Resources::new(cpu, 4 * GIB) }
    }

    fn source(name: &str, node: &str, tier: &str) -> DataSource {
        DataSource {
            name: name.into(),
            url: format!("tcp-connect:{node}:7000"),
            labels: [("tier".to_string(), tier.to_string())].into(),
            node: node.into(),
        }
    }

    fn step(name: &str, tier: &str, cpu: u64, region: Option<&str>) -> AnalysisStep {
        let sel: Selector = [("tier".to_string(), tier.to_string())].into();
        AnalysisStep {
            name: name.into(),
            ingest_selectors: vec![sel],
            workload: "detect --input {source.url}".into(),
            resources: Resources::new(cpu, GIB / 4),
            region: region.map(Into::into),
            hyperparameters: Default::default(),
        }
    }

    fn registry() -> Registry {
        let mut r = Registry::new();
        r.register_node(node("e1", "edge", 1000)).unwrap();
        r.register_node(node("e2", "edge", 1000)).unwrap();
        r.register_node(node("c1", "cloud", 8000)).unwrap();
        r
    }

    fn apply(plan: &PlacementPlan) -> BTreeMap<WorkloadKey, Workload> {
        plan.assignments.clone()
    }

    #[test]
    fn empty_registry_empty_plan() {
        assert_eq!(reconcile(&Registry::new(), &BTreeMap::new()), PlacementPlan::default());
    }

    #[test]
    fn in_place_preference() {
        let mut r = registry();
        r.register_source(source("s", "e2", "edge")).unwrap();
        r.register_step(step("d", "edge", 200, None)).unwrap();
        let plan = reconcile(&r, &BTreeMap::new());
        assert_eq!(plan.create[0].node, "e2");
    }

    #[test]
    fn region_filter_first() {
        let mut r = registry();
        r.register_source(source("s", "e1", "edge")).unwrap();
        r.register_step(step("d", "edge", 200, Some("cloud"))).unwrap();
        assert_eq!(reconcile(&r, &BTreeMap::new()).create[0].node, "c1");
    }

    #[test]
    fn spills_to_same_region_before_others() {
        let mut r = registry();
        r.register_source(source("s", "e1", "edge")).unwrap();
        r.register_step(step("a", "edge", 800, None)).unwrap();
        r.register_step(step("b", "edge", 800, None)).unwrap();
        r.register_step(step("c", "edge", 800, None)).unwrap();
        let plan = reconcile(&r, &BTreeMap::new());
        let nodes: Vec<&str> = plan.create.iter().map(|w| w.node.as_str()).collect();
        assert_eq!(nodes, vec!["e1", "e2", "c1"]);
    }

    #[test]
    fn oversized_request_unschedulable() {
        let mut r = Registry::new();
        r.register_node(node("a", "edge", 1000)).unwrap();
        r.register_node(node("z", "edge", 0)).unwrap();
        r.register_source(source("s", "a", "edge")).unwrap();
        r.register_step(step("d", "edge", 4000, None)).unwrap();
        let plan = reconcile(&r, &BTreeMap::new());
        assert!(plan.create.is_empty());
        assert_eq!(plan.unschedulable.len(), 1);
    }

    #[test]
    fn one_workload_per_source_with_own_url() {
        let mut r = registry();
        for (i, n) in ["e1", "e2", "c1"].iter().enumerate() {
            r.register_source(source(&format!("s{i}"), n, "edge")).unwrap();
        }
        r.register_step(step("d", "edge", 100, None)).unwrap();
        let plan = reconcile(&r, &BTreeMap::new());
        assert_eq!(plan.create.len(), 3);
        for w in &plan.create {
            assert_eq!(w.command, format!("detect --input tcp-connect:{}:7000", w.node));
        }
    }

    #[test]
    fn converged_state_is_idempotent_and_deletes_follow_step() {
        let mut r = registry();
        for (i, n) in ["e1", "e2", "c1"].iter().enumerate() {
            r.register_source(source(&format!("s{i}"), n, "edge")).unwrap();
        }
        r.register_step(step("d", "edge", 100, None)).unwrap();
        r.register_step(step("keep", "edge", 100, None)).unwrap();
        let running = apply(&reconcile(&r, &BTreeMap::new()));
        let again = reconcile(&r, &running);
        assert!(again.diff_is_empty());
        assert_eq!(again.assignments, running);

        r.delete_step("d").unwrap();
        let plan = reconcile(&r, &running);
        assert!(plan.create.is_empty());
        let mut gone: Vec<_> = plan.delete.iter().map(Workload::key).collect();
        gone.sort();
        let expected: Vec<_> = running.keys().filter(|k| k.step == "d").cloned().collect();
        assert_eq!(gone, expected);
    }

    #[test]
    fn template_change_replaces_workload() {
        let mut r = registry();
        r.register_source(source("s", "e1", "edge")).unwrap();
        r.register_step(step("d", "edge", 100, None)).unwrap();
        let running = apply(&reconcile(&r, &BTreeMap::new()));
        let mut st = step("d", "edge", 100, None);
        st.workload = "other {source.name}".into();
        r.update_step(st).unwrap();
        let plan = reconcile(&r, &running);
        assert_eq!((plan.delete.len(), plan.create.len()), (1, 1));
        assert_eq!(plan.create[0].command, "other s");
    }

    #[test]
    fn plan_lines_json() {
        let mut r = registry();
        r.register_source(source("s", "e1", "edge")).unwrap();
        r.register_step(step("d", "edge", 100, None)).unwrap();
        let line = serde_json::to_value(&reconcile(&r, &BTreeMap::new()).lines()[0]).unwrap();
        assert_eq!(line["op"], "create");
        assert_eq!(line["node"], "e1");
    }
}
