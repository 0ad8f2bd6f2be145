use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use proptest::prelude::*;
use zerops_core::iftm::{AnomalyEvent, DetectorKind};
use zerops_core::rca::{rank_root_causes, Correlator, CorrelatorConfig, DependencyKind, DependencyModel, Incident};
use zerops_core::stream::ComponentId;

const SEC: u64 = 1_000_000_000;
const GAP: u64 = 30 * SEC;
const NAMES: [&str; 5] = ["a", "b", "c", "d", "e"];

fn event(component: &str, ts: u64, error: f64) -> AnomalyEvent {
    AnomalyEvent {
        component: ComponentId::new(component),
        timestamp: ts,
        detector: DetectorKind::Arima,
        error,
        threshold: 1.0,
        per_metric_error: vec![error],
    }
}

fn run(events: &[AnomalyEvent], lateness: Duration) -> (Vec<Incident>, u64) {
    let mut c = Correlator::new(CorrelatorConfig { gap: Duration::from_nanos(GAP), lateness });
    let mut out = Vec::new();
    for e in events {
        out.extend(c.ingest(e.clone()));
    }
    out.extend(c.flush());
    (out, c.dropped_late())
}

/// Order-free summary of an incident.
fn canonical(i: &Incident) -> (u64, u64, u64, Vec<(String, u64, u64)>) {
    let mut evs: Vec<(String, u64, u64)> =
        i.events.values().flatten().map(|e| (e.component.0.clone(), e.timestamp, e.error.to_bits())).collect();
    evs.sort();
    (i.id, i.start_ns, i.end_ns, evs)
}

/// Single-linkage clusters of the sorted timestamps: consecutive events
/// more than the gap apart start a new group.
fn oracle_groups(events: &[AnomalyEvent]) -> Vec<(u64, u64, usize)> {
    let mut ts: Vec<u64> = events.iter().map(|e| e.timestamp).collect();
    ts.sort_unstable();
    let mut groups: Vec<(u64, u64, usize)> = Vec::new();
    for t in ts {
        match groups.last_mut() {
            Some(g) if t - g.1 <= GAP => {
                g.1 = t;
                g.2 += 1;
            }
            _ => groups.push((t, t, 1)),
        }
    }
    groups
}

fn events_strategy() -> impl Strategy<Value = Vec<AnomalyEvent>> {
    prop::collection::vec((0..NAMES.len(), 0u64..600, 0u32..1000), 1..40).prop_map(|raw| {
        raw.into_iter().map(|(c, s, e)| event(NAMES[c], s * SEC / 2, f64::from(e))).collect()
    })
}

fn edges_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..NAMES.len(), 0..NAMES.len()), 0..10)
}

fn model(edges: &[(usize, usize)]) -> DependencyModel {
    let mut m = DependencyModel::new();
    for n in NAMES {
        m.add_component(n);
    }
    for &(f, t) in edges {
        if f != t {
            m.add_edge(NAMES[f], NAMES[t], DependencyKind::Vertical).unwrap();
        }
    }
    m
}

/// Members that reach `c` over depends-on edges, via Warshall's closure.
fn oracle_dependents(edges: &[(usize, usize)], c: usize, members: &BTreeSet<usize>) -> usize {
    let n = NAMES.len();
    let mut reach = vec![vec![false; n]; n];
    for &(f, t) in edges {
        if f != t {
            reach[f][t] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    members.iter().filter(|&&m| m != c && reach[m][c]).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn grouping_matches_single_linkage(events in events_strategy()) {
        let (incidents, dropped) = run(&events, Duration::from_secs(3600));
        prop_assert_eq!(dropped, 0);
        let got: Vec<(u64, u64, usize)> = incidents.iter().map(|i| (i.start_ns, i.end_ns, i.event_count())).collect();
        prop_assert_eq!(got, oracle_groups(&events));
        let ids: Vec<u64> = incidents.iter().map(|i| i.id).collect();
        prop_assert_eq!(ids, (1..=incidents.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn any_arrival_order_gives_the_same_incidents(
        (events, shuffled) in events_strategy().prop_flat_map(|e| (Just(e.clone()), Just(e).prop_shuffle())),
        edges in edges_strategy(),
    ) {
        // lateness covering the whole span: nothing is dropped or closed early
        let lateness = Duration::from_secs(3600);
        let (a, _) = run(&events, lateness);
        let (b, _) = run(&shuffled, lateness);
        prop_assert_eq!(a.iter().map(canonical).collect::<Vec<_>>(), b.iter().map(canonical).collect::<Vec<_>>());
        let deps = model(&edges);
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(rank_root_causes(x, &deps), rank_root_causes(y, &deps));
        }
    }

    #[test]
    fn disorder_within_lateness_is_absorbed(
        events in events_strategy(),
        delays in prop::collection::vec(0u64..=10, 40),
    ) {
        // arrival = event time + delay of at most the lateness (5 s)
        let lateness = Duration::from_secs(5);
        let mut sorted = events.clone();
        sorted.sort_by_key(|e| e.timestamp);
        let mut arrival: Vec<(u64, usize)> =
            events.iter().enumerate().map(|(i, e)| (e.timestamp + delays[i] * SEC / 2, i)).collect();
        arrival.sort();
        let delayed: Vec<AnomalyEvent> = arrival.iter().map(|&(_, i)| events[i].clone()).collect();
        let (a, da) = run(&sorted, lateness);
        let (b, db) = run(&delayed, lateness);
        prop_assert_eq!(da, 0);
        prop_assert_eq!(db, 0);
        prop_assert_eq!(a.iter().map(canonical).collect::<Vec<_>>(), b.iter().map(canonical).collect::<Vec<_>>());
    }

    #[test]
    fn ranking_matches_oracle(events in events_strategy(), edges in edges_strategy()) {
        let deps = model(&edges);
        let (incidents, _) = run(&events, Duration::from_secs(3600));
        for inc in &incidents {
            let mut onsets: BTreeMap<usize, u64> = BTreeMap::new();
            for e in inc.events.values().flatten() {
                let idx = NAMES.iter().position(|n| *n == e.component.0).unwrap();
                let t = onsets.entry(idx).or_insert(u64::MAX);
                *t = (*t).min(e.timestamp);
            }
            let members: BTreeSet<usize> = onsets.keys().copied().collect();
            let mut expected: Vec<usize> = members.iter().copied().collect();
            expected.sort_by(|&x, &y| {
                onsets[&x]
                    .cmp(&onsets[&y])
                    .then(oracle_dependents(&edges, y, &members).cmp(&oracle_dependents(&edges, x, &members)))
                    .then(NAMES[x].cmp(NAMES[y]))
            });
            let expected: Vec<ComponentId> = expected.into_iter().map(|i| ComponentId::new(NAMES[i])).collect();
            prop_assert_eq!(rank_root_causes(inc, &deps), expected);
        }
    }
}

#[test]
fn events_far_behind_the_watermark_are_dropped_and_counted() {
    let events = [event("a", 100 * SEC, 1.0), event("b", 90 * SEC, 1.0), event("c", 96 * SEC, 1.0)];
    let (incidents, dropped) = run(&events, Duration::from_secs(5));
    assert_eq!(dropped, 1);
    assert_eq!(incidents.len(), 1);
    assert_eq!(incidents[0].components().len(), 2);
}
