//! Event-time correlation of anomaly events into incidents and root-cause ranking.
//!
//! Events are sessionized per incident with a gap timeout; within a closed
//! incident the component whose anomaly started first is the root-cause
//! candidate. Ties go to the component more of the incident transitively
//! depends on, then to the lexicographically smaller name.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::iftm::AnomalyEvent;
use crate::stream::ComponentId;

#[derive(Debug, Error)]
pub enum RcaError {
    #[error("dependency model line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("edge references unknown component {0}")]
    UnknownComponent(ComponentId),
    #[error("dependency model i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DependencyKind {
    Horizontal,
    Vertical,
}

/// `from` depends on `to`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: ComponentId,
    pub to: ComponentId,
    pub kind: DependencyKind,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ModelLine {
    Component { component: ComponentId },
    Edge { edge: Edge },
}

/// Known components and their depends-on edges. Cycles are allowed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DependencyModel {
    components: BTreeSet<ComponentId>,
    edges: BTreeSet<Edge>,
    /// to -> set of components that directly depend on it
    dependents: BTreeMap<ComponentId, BTreeSet<ComponentId>>,
}

impl DependencyModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_component(&mut self, c: impl Into<ComponentId>) -> &mut Self {
        self.components.insert(c.into());
        self
    }

    pub fn add_edge(
        &mut self,
        from: impl Into<ComponentId>,
        to: impl Into<ComponentId>,
        kind: DependencyKind,
    ) -> Result<&mut Self, RcaError> {
        let (from, to) = (from.into(), to.into());
        for c in [&from, &to] {
            if !self.components.contains(c) {
                return Err(RcaError::UnknownComponent(c.clone()));
            }
        }
        self.dependents.entry(to.clone()).or_default().insert(from.clone());
        self.edges.insert(Edge { from, to, kind });
        Ok(self)
    }

    pub fn components(&self) -> &BTreeSet<ComponentId> {
        &self.components
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    /// Parses NDJSON `{"component":..}` and `{"edge":{..}}` lines. Edges may
    /// precede the components they reference.
    pub fn from_ndjson(reader: impl BufRead) -> Result<Self, RcaError> {
        let mut edges = Vec::new();
        let mut model = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ModelLine = serde_json::from_str(&line)
                .map_err(|e| RcaError::Parse { line: i + 1, reason: e.to_string() })?;
            match parsed {
                ModelLine::Component { component } => {
                    model.add_component(component);
                }
                ModelLine::Edge { edge } => edges.push(edge),
            }
        }
        for e in edges {
            model.add_edge(e.from, e.to, e.kind)?;
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, RcaError> {
        let f = std::fs::File::open(path)?;
        Self::from_ndjson(std::io::BufReader::new(f))
    }

    pub fn write_ndjson(&self, mut w: impl Write) -> std::io::Result<()> {
        for c in &self.components {
            serde_json::to_writer(&mut w, &ModelLine::Component { component: c.clone() })?;
            writeln!(w)?;
        }
        for e in &self.edges {
            serde_json::to_writer(&mut w, &ModelLine::Edge { edge: e.clone() })?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// How many members of `within` depend on `c`, directly or transitively.
    pub fn transitive_dependents(&self, c: &ComponentId, within: &BTreeSet<ComponentId>) -> usize {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([c.clone()]);
        while let Some(cur) = queue.pop_front() {
            for d in self.dependents.get(&cur).into_iter().flatten() {
                if d != c && seen.insert(d.clone()) {
                    queue.push_back(d.clone());
                }
            }
        }
        seen.iter().filter(|d| within.contains(*d)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrelatorConfig {
    pub gap: Duration,
    pub lateness: Duration,
}

impl Default for CorrelatorConfig {
    fn default() -> Self {
        Self { gap: Duration::from_secs(30), lateness: Duration::from_secs(5) }
    }
}

/// A time-windowed group of anomaly events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub id: u64,
    pub start_ns: u64,
    pub end_ns: u64,
    pub events: BTreeMap<ComponentId, Vec<AnomalyEvent>>,
}

impl Incident {
    fn open(ev: AnomalyEvent) -> Self {
        let mut events = BTreeMap::new();
        let (start_ns, end_ns) = (ev.timestamp, ev.timestamp);
        events.insert(ev.component.clone(), vec![ev]);
        Self { id: 0, start_ns, end_ns, events }
    }

    fn add(&mut self, ev: AnomalyEvent) {
        self.start_ns = self.start_ns.min(ev.timestamp);
        self.end_ns = self.end_ns.max(ev.timestamp);
        let list = self.events.entry(ev.component.clone()).or_default();
        let pos = list.partition_point(|e| e.timestamp <= ev.timestamp);
        list.insert(pos, ev);
    }

    fn absorb(&mut self, other: Incident) {
        for ev in other.events.into_values().flatten() {
            self.add(ev);
        }
    }

    /// First event time per component.
    pub fn onsets(&self) -> BTreeMap<ComponentId, u64> {
        self.events
            .iter()
            .map(|(c, evs)| (c.clone(), evs.iter().map(|e| e.timestamp).min().unwrap_or(u64::MAX)))
            .collect()
    }

    pub fn components(&self) -> BTreeSet<ComponentId> {
        self.events.keys().cloned().collect()
    }

    pub fn event_count(&self) -> usize {
        self.events.values().map(Vec::len).sum()
    }
}

/// Ranked root-cause candidates for one incident.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCauseVerdict {
    pub incident_id: u64,
    pub ranking: Vec<ComponentId>,
    pub onsets: BTreeMap<ComponentId, u64>,
}

/// Orders the incident's components by onset, then by transitive dependents
/// (more first), then by name.
pub fn rank_root_causes(incident: &Incident, deps: &DependencyModel) -> Vec<ComponentId> {
    let onsets = incident.onsets();
    let members = incident.components();
    let mut keyed: Vec<(u64, std::cmp::Reverse<usize>, ComponentId)> = onsets
        .into_iter()
        .map(|(c, t)| (t, std::cmp::Reverse(deps.transitive_dependents(&c, &members)), c))
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, _, c)| c).collect()
}

pub fn verdict(incident: &Incident, deps: &DependencyModel) -> RootCauseVerdict {
    RootCauseVerdict { incident_id: incident.id, ranking: rank_root_causes(incident, deps), onsets: incident.onsets() }
}

/// Sessionizes anomaly events into incidents by event time.
#[derive(Debug, Clone)]
pub struct Correlator {
    gap: u64,
    lateness: u64,
    open: Vec<Incident>,
    watermark: Option<u64>,
    dropped_late: u64,
    next_id: u64,
}

fn nanos(d: Duration) -> u64 {
    u64::try_from(d.as_nanos()).unwrap_or(u64::MAX)
}

impl Correlator {
    pub fn new(config: CorrelatorConfig) -> Self {
        Self {
            gap: nanos(config.gap),
            lateness: nanos(config.lateness),
            open: Vec::new(),
            watermark: None,
            dropped_late: 0,
            next_id: 1,
        }
    }

    pub fn dropped_late(&self) -> u64 {
        self.dropped_late
    }

    pub fn watermark(&self) -> Option<u64> {
        self.watermark
    }

    pub fn open_incidents(&self) -> &[Incident] {
        &self.open
    }

    /// Adds an event and returns incidents that closed as a result.
    /// Events older than `watermark - lateness` are dropped and counted.
    pub fn ingest(&mut self, ev: AnomalyEvent) -> Vec<Incident> {
        if let Some(wm) = self.watermark {
            if ev.timestamp < wm.saturating_sub(self.lateness) {
                self.dropped_late += 1;
                warn!(component = %ev.component, ts = ev.timestamp, watermark = wm, "dropping late anomaly event");
                return Vec::new();
            }
        }
        let t = ev.timestamp;
        let (gap, mut joined) = (self.gap, Vec::new());
        for (i, inc) in self.open.iter().enumerate() {
            if t.saturating_add(gap) >= inc.start_ns && t <= inc.end_ns.saturating_add(gap) {
                joined.push(i);
            }
        }
        match joined.split_first() {
            None => self.open.push(Incident::open(ev)),
            Some((&first, rest)) => {
                // An event can bridge several incidents; fold them together.
                for &i in rest.iter().rev() {
                    let other = self.open.remove(i);
                    self.open[first].absorb(other);
                }
                self.open[first].add(ev);
            }
        }
        self.advance(t)
    }

    /// Moves event time forward without an event and returns incidents that closed.
    pub fn advance(&mut self, now: u64) -> Vec<Incident> {
        let wm = self.watermark.map_or(now, |w| w.max(now));
        self.watermark = Some(wm);
        let horizon = wm.saturating_sub(self.lateness);
        let (closed, open): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.open).into_iter().partition(|i| horizon > i.end_ns.saturating_add(self.gap));
        self.open = open;
        self.finish(closed)
    }

    /// Closes every open incident.
    pub fn flush(&mut self) -> Vec<Incident> {
        let all = std::mem::take(&mut self.open);
        self.finish(all)
    }

    fn finish(&mut self, mut closed: Vec<Incident>) -> Vec<Incident> {
        closed.sort_by_key(|i| i.start_ns);
        for inc in &mut closed {
            inc.id = self.next_id;
            self.next_id += 1;
            debug!(id = inc.id, events = inc.event_count(), "incident closed");
        }
        closed
    }
}
