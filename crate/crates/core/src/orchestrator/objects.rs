use std::collections::BTreeMap;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::stream::Endpoint;

/// CPU in millicores and memory in bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Resources {
    pub cpu_millis: u64,
    pub memory_bytes: u64,
}

impl Resources {
    pub fn new(cpu_millis: u64, memory_bytes: u64) -> Self {
        Self { cpu_millis, memory_bytes }
    }

    pub fn fits_in(&self, other: &Resources) -> bool {
        self.cpu_millis <= other.cpu_millis && self.memory_bytes <= other.memory_bytes
    }
}

impl Add for Resources {
    type Output = Resources;

    fn add(self, o: Resources) -> Resources {
        Resources::new(self.cpu_millis + o.cpu_millis, self.memory_bytes + o.memory_bytes)
    }
}

impl Sub for Resources {
    type Output = Resources;

    /// Saturates at zero.
    fn sub(self, o: Resources) -> Resources {
        Resources::new(self.cpu_millis.saturating_sub(o.cpu_millis), self.memory_bytes.saturating_sub(o.memory_bytes))
    }
}

/// Every key=value pair must be present in the labels.
pub type Selector = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSource {
    pub name: String,
    pub url: String,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    pub node: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisStep {
    pub name: String,
    pub ingest_selectors: Vec<Selector>,
    /// Command template; `{source.url}`, `{source.name}`, `{step.name}` and
    /// `{param.KEY}` are substituted per source.
    pub workload: String,
    pub resources: Resources,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub region: String,
    pub capacity: Resources,
}

/// One line of an object file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Object {
    DataSource(DataSource),
    AnalysisStep(AnalysisStep),
    Node(Node),
}

fn invalid(kind: &'static str, name: &str, reason: impl Into<String>) -> OrchestratorError {
    OrchestratorError::Invalid { kind, name: name.to_string(), reason: reason.into() }
}

impl DataSource {
    pub const KIND: &'static str = "DataSource";

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.name.is_empty() {
            return Err(invalid(Self::KIND, &self.name, "empty name"));
        }
        if self.node.is_empty() {
            return Err(invalid(Self::KIND, &self.name, "empty hosting node"));
        }
        self.url
            .parse::<Endpoint>()
            .map_err(|e| invalid(Self::KIND, &self.name, e.to_string()))?;
        Ok(())
    }

    pub fn matches(&self, selector: &Selector) -> bool {
        selector.iter().all(|(k, v)| self.labels.get(k) == Some(v))
    }
}

impl AnalysisStep {
    pub const KIND: &'static str = "AnalysisStep";

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.name.is_empty() {
            return Err(invalid(Self::KIND, &self.name, "empty name"));
        }
        if self.ingest_selectors.is_empty() {
            return Err(invalid(Self::KIND, &self.name, "at least one ingest selector is required"));
        }
        if self.resources.cpu_millis == 0 || self.resources.memory_bytes == 0 {
            return Err(invalid(Self::KIND, &self.name, "resource request must be positive"));
        }
        Ok(())
    }

    /// Any selector matching makes the source match.
    pub fn selects(&self, source: &DataSource) -> bool {
        self.ingest_selectors.iter().any(|s| source.matches(s))
    }

    pub fn permits(&self, node: &Node) -> bool {
        self.region.as_ref().is_none_or(|r| *r == node.region)
    }

    pub fn render(&self, source: &DataSource) -> String {
        let mut cmd = self
            .workload
            .replace("{source.url}", &source.url)
            .replace("{source.name}", &source.name)
            .replace("{step.name}", &self.name);
        for (k, v) in &self.hyperparameters {
            cmd = cmd.replace(&format!("{{param.{k}}}"), v);
        }
        cmd
    }
}

impl Node {
    pub const KIND: &'static str = "Node";

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.name.is_empty() {
            return Err(invalid(Self::KIND, &self.name, "empty name"));
        }
        if self.region.is_empty() {
            return Err(invalid(Self::KIND, &self.name, "empty region"));
        }
        Ok(())
    }
}

impl Object {
    pub fn kind(&self) -> &'static str {
        match self {
            Object::DataSource(_) => DataSource::KIND,
            Object::AnalysisStep(_) => AnalysisStep::KIND,
            Object::Node(_) => Node::KIND,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Object::DataSource(o) => &o.name,
            Object::AnalysisStep(o) => &o.name,
            Object::Node(o) => &o.name,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn source(l: &[(&str, &str)]) -> DataSource {
        DataSource { name: "s".into(), url: "tcp-connect:e1:9000".into(), labels: labels(l), node: "e1".into() }
    }

    fn step(selectors: Vec<Selector>) -> AnalysisStep {
        AnalysisStep {
            name: "detect".into(),
            ingest_selectors: selectors,
            workload: "zerops detect --input {source.url} --component {source.name} --params T={param.T}".into(),
            resources: Resources::new(200, 1 << 20),
            region: None,
            hyperparameters: labels(&[("T", "3")]),
        }
    }

    #[test]
    fn selector_semantics() {
        let src = source(&[("tier", "edge"), ("city", "berlin")]);
        assert!(step(vec![labels(&[("tier", "edge")])]).selects(&src));
        let cloud = source(&[("tier", "cloud")]);
        assert!(step(vec![labels(&[("tier", "edge")]), labels(&[("tier", "cloud")])]).selects(&cloud));
        assert!(!step(vec![labels(&[("tier", "edge"), ("gpu", "yes")])]).selects(&source(&[("tier", "edge")])));
    }

    #[test]
    fn template_expansion() {
        let s = step(vec![labels(&[])]);
        assert_eq!(
            s.render(&source(&[])),
            "zerops detect --input tcp-connect:e1:9000 --component s --params T=3"
        );
    }

    #[test]
    fn validation() {
        let mut bad = source(&[]);
        bad.url = "http://x".into();
        assert!(bad.validate().is_err());
        assert!(step(vec![]).validate().is_err());
        let mut zero = step(vec![labels(&[])]);
        zero.resources.cpu_millis = 0;
        assert!(zero.validate().is_err());
        assert!(Node { name: "n".into(), region: "edge".into(), capacity: Resources::default() }.validate().is_ok());
    }

    #[test]
    fn object_json_kind_tag() {
        let line = r#"{"kind":"Node","name":"e1","region":"edge","capacity":{"cpu_millis":1000,"memory_bytes":1024}}"#;
        let obj: Object = serde_json::from_str(line).unwrap();
        assert_eq!(obj.kind(), "Node");
        assert_eq!(obj.name(), "e1");
        assert_eq!(serde_json::from_str::<Object>(&serde_json::to_string(&obj).unwrap()).unwrap(), obj);
    }
}
