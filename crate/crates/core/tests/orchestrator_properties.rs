use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use zerops_core::orchestrator::{reconcile, AnalysisStep, DataSource, Node, Registry, Resources, Selector, WorkloadKey};

const REGIONS: [&str; 2] = ["eu", "us"];
const ROLES: [&str; 3] = ["db", "web", "cache"];
const TIERS: [&str; 2] = ["gold", "bronze"];

#[derive(Debug, Clone)]
struct World {
    nodes: Vec<Node>,
    sources: Vec<DataSource>,
    steps: Vec<AnalysisStep>,
}

fn labels(role: usize, tier: usize) -> BTreeMap<String, String> {
    BTreeMap::from([("role".into(), ROLES[role].into()), ("tier".into(), TIERS[tier].into())])
}

fn world() -> impl Strategy<Value = World> {
    let nodes = prop::collection::vec((0..REGIONS.len(), 1u64..8, 1u64..8), 1..5);
    let sources = prop::collection::vec((0..ROLES.len(), 0..TIERS.len(), 0usize..5), 0..6);
    // each selector: optional role, optional tier (empty selector matches all)
    let selector = (prop::option::of(0..ROLES.len()), prop::option::of(0..TIERS.len()));
    let steps = prop::collection::vec(
        (prop::collection::vec(selector, 1..3), 1u64..5, 1u64..5, prop::option::of(0..REGIONS.len())),
        0..4,
    );
    (nodes, sources, steps).prop_map(|(nodes, sources, steps)| {
        let nodes: Vec<Node> = nodes
            .into_iter()
            .enumerate()
            .map(|(i, (r, cpu, mem))| Node {
                name: format!("n{i}"),
                region: REGIONS[r].into(),
                capacity: Resources::new(cpu * 250, mem * 1000),
            })
            .collect();
        let sources = sources
            .into_iter()
            .enumerate()
            .map(|(i, (role, tier, node))| DataSource {
                name: format!("s{i}"),
                url: format!("tcp-connect:10.0.0.{i}:7000"),
                labels: labels(role, tier),
                node: nodes[node % nodes.len()].name.clone(),
            })
            .collect();
        let steps = steps
            .into_iter()
            .enumerate()
            .map(|(i, (sels, cpu, mem, region))| AnalysisStep {
                name: format!("step{i}"),
                ingest_selectors: sels
                    .into_iter()
                    .map(|(role, tier)| {
                        let mut s = Selector::new();
                        if let Some(r) = role {
                            s.insert("role".into(), ROLES[r].into());
                        }
                        if let Some(t) = tier {
                            s.insert("tier".into(), TIERS[t].into());
                        }
                        s
                    })
                    .collect(),
                workload: "detect --in {source.url} --step {step.name}".into(),
                resources: Resources::new(cpu * 250, mem * 1000),
                region: region.map(|r| REGIONS[r].to_string()),
                hyperparameters: BTreeMap::new(),
            })
            .collect();
        World { nodes, sources, steps }
    })
}

fn registry(w: &World) -> Registry {
    let mut reg = Registry::new();
    for n in &w.nodes {
        reg.register_node(n.clone()).unwrap();
    }
    for s in &w.sources {
        reg.register_source(s.clone()).unwrap();
    }
    for s in &w.steps {
        reg.register_step(s.clone()).unwrap();
    }
    reg
}

/// Pairs a step should analyse, computed straight from the label rules:
/// every pair of a selector must be present, any selector may match.
fn desired(w: &World) -> BTreeSet<WorkloadKey> {
    let mut out = BTreeSet::new();
    for st in &w.steps {
        for so in &w.sources {
            let hit = st.ingest_selectors.iter().any(|sel| sel.iter().all(|(k, v)| so.labels.get(k) == Some(v)));
            if hit {
                out.insert(WorkloadKey::new(&st.name, &so.name));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn plans_respect_capacity_regions_and_coverage(w in world()) {
        let reg = registry(&w);
        let plan = reconcile(&reg, &BTreeMap::new());
        let nodes: BTreeMap<&str, &Node> = w.nodes.iter().map(|n| (n.name.as_str(), n)).collect();

        // no node is oversubscribed
        for (node, used) in plan.usage() {
            prop_assert!(used.fits_in(&nodes[node.as_str()].capacity), "{node} over capacity");
        }
        // region restrictions hold
        for wl in plan.assignments.values() {
            let step = w.steps.iter().find(|s| s.name == wl.step).unwrap();
            if let Some(r) = &step.region {
                prop_assert_eq!(&nodes[wl.node.as_str()].region, r);
            }
            prop_assert_eq!(wl.resources, step.resources);
        }
        // every desired pair is either placed or reported, never both
        let placed: BTreeSet<WorkloadKey> = plan.assignments.keys().cloned().collect();
        let unsched: BTreeSet<WorkloadKey> =
            plan.unschedulable.iter().map(|u| WorkloadKey::new(&u.step, &u.source)).collect();
        prop_assert!(placed.is_disjoint(&unsched));
        prop_assert_eq!(placed.union(&unsched).cloned().collect::<BTreeSet<_>>(), desired(&w));
        prop_assert_eq!(plan.create.len(), plan.assignments.len());
        prop_assert!(plan.delete.is_empty());

        // an unschedulable pair does not fit any permitted node even now
        let usage = plan.usage();
        for u in &plan.unschedulable {
            let step = w.steps.iter().find(|s| s.name == u.step).unwrap();
            for n in w.nodes.iter().filter(|n| step.permits(n)) {
                let free = n.capacity - usage.get(&n.name).copied().unwrap_or_default();
                prop_assert!(!step.resources.fits_in(&free), "{} would fit on {}", u.step, n.name);
            }
        }
    }

    #[test]
    fn reconcile_is_idempotent(w in world()) {
        let reg = registry(&w);
        let first = reconcile(&reg, &BTreeMap::new());
        let second = reconcile(&reg, &first.assignments);
        prop_assert!(second.diff_is_empty());
        prop_assert_eq!(&second.assignments, &first.assignments);
        prop_assert_eq!(second.unschedulable.len(), first.unschedulable.len());
    }

    #[test]
    fn adding_a_node_never_moves_running_workloads(w in world(), region in 0..REGIONS.len()) {
        let mut reg = registry(&w);
        let first = reconcile(&reg, &BTreeMap::new());
        reg.register_node(Node {
            name: "zz-new".into(),
            region: REGIONS[region].into(),
            capacity: Resources::new(2000, 8000),
        })
        .unwrap();
        let second = reconcile(&reg, &first.assignments);
        prop_assert!(second.delete.is_empty());
        for (k, wl) in &first.assignments {
            prop_assert_eq!(&second.assignments[k].node, &wl.node);
        }
        prop_assert!(second.unschedulable.len() <= first.unschedulable.len());
    }

    #[test]
    fn deleting_a_source_deletes_exactly_its_workloads(w in world(), pick in any::<prop::sample::Index>()) {
        prop_assume!(!w.sources.is_empty());
        let mut reg = registry(&w);
        let first = reconcile(&reg, &BTreeMap::new());
        let gone = w.sources[pick.index(w.sources.len())].name.clone();
        reg.delete_source(&gone).unwrap();
        let second = reconcile(&reg, &first.assignments);
        let deleted: BTreeSet<WorkloadKey> = second.delete.iter().map(|d| d.key()).collect();
        let expected: BTreeSet<WorkloadKey> =
            first.assignments.keys().filter(|k| k.source == gone).cloned().collect();
        prop_assert_eq!(deleted, expected);
        prop_assert!(second.assignments.keys().all(|k| k.source != gone));
    }
}

#[test]
fn lone_workload_prefers_the_hosting_node() {
    let w = World {
        nodes: vec![
            Node { name: "a-big".into(), region: "eu".into(), capacity: Resources::new(4000, 4000) },
            Node { name: "b-host".into(), region: "eu".into(), capacity: Resources::new(500, 1000) },
        ],
        sources: vec![DataSource {
            name: "s".into(),
            url: "tcp-connect:h:1".into(),
            labels: labels(0, 0),
            node: "b-host".into(),
        }],
        steps: vec![AnalysisStep {
            name: "st".into(),
            ingest_selectors: vec![Selector::new()],
            workload: "x".into(),
            resources: Resources::new(500, 1000),
            region: None,
            hyperparameters: BTreeMap::new(),
        }],
    };
    let plan = reconcile(&registry(&w), &BTreeMap::new());
    assert_eq!(plan.assignments[&WorkloadKey::new("st", "s")].node, "b-host");
}
