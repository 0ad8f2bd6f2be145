use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use super::{AnalysisStep, DataSource, Node, Object, OrchestratorError};

/// Desired-state objects, keyed and iterated by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    sources: BTreeMap<String, DataSource>,
    steps: BTreeMap<String, AnalysisStep>,
    nodes: BTreeMap<String, Node>,
}

macro_rules! crud {
    ($field:ident, $ty:ty, $register:ident, $update:ident, $delete:ident, $get:ident) => {
        pub fn $register(&mut self, obj: $ty) -> Result<(), OrchestratorError> {
            obj.validate()?;
            if self.$field.contains_key(&obj.name) {
                return Err(OrchestratorError::Duplicate { kind: <$ty>::KIND, name: obj.name });
            }
            self.$field.insert(obj.name.clone(), obj);
            Ok(())
        }

        pub fn $update(&mut self, obj: $ty) -> Result<(), OrchestratorError> {
            obj.validate()?;
            match self.$field.get_mut(&obj.name) {
                Some(slot) => {
                    *slot = obj;
                    Ok(())
                }
                None => Err(OrchestratorError::Unknown { kind: <$ty>::KIND, name: obj.name }),
            }
        }

        pub fn $delete(&mut self, name: &str) -> Result<$ty, OrchestratorError> {
            self.$field
                .remove(name)
                .ok_or_else(|| OrchestratorError::Unknown { kind: <$ty>::KIND, name: name.to_string() })
        }

        pub fn $get(&self, name: &str) -> Option<&$ty> {
            self.$field.get(name)
        }
    };
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    crud!(sources, DataSource, register_source, update_source, delete_source, source);
    crud!(steps, AnalysisStep, register_step, update_step, delete_step, step);
    crud!(nodes, Node, register_node, update_node, delete_node, node);

    pub fn sources(&self) -> &BTreeMap<String, DataSource> {
        &self.sources
    }

    pub fn steps(&self) -> &BTreeMap<String, AnalysisStep> {
        &self.steps
    }

    pub fn nodes(&self) -> &BTreeMap<String, Node> {
        &self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty() && self.steps.is_empty() && self.nodes.is_empty()
    }

    pub fn register(&mut self, obj: Object) -> Result<(), OrchestratorError> {
        match obj {
            Object::DataSource(o) => self.register_source(o),
            Object::AnalysisStep(o) => self.register_step(o),
            Object::Node(o) => self.register_node(o),
        }
    }

    /// Registers the object, replacing one of the same kind and name.
    pub fn upsert(&mut self, obj: Object) -> Result<(), OrchestratorError> {
        match obj {
            Object::DataSource(o) if self.sources.contains_key(&o.name) => self.update_source(o),
            Object::AnalysisStep(o) if self.steps.contains_key(&o.name) => self.update_step(o),
            Object::Node(o) if self.nodes.contains_key(&o.name) => self.update_node(o),
            other => self.register(other),
        }
    }

    pub fn objects(&self) -> Vec<Object> {
        let nodes = self.nodes.values().cloned().map(Object::Node);
        let sources = self.sources.values().cloned().map(Object::DataSource);
        let steps = self.steps.values().cloned().map(Object::AnalysisStep);
        nodes.chain(sources).chain(steps).collect()
    }

    /// Parses NDJSON object lines; `origin` labels errors.
    pub fn parse_objects(reader: impl BufRead, origin: &str) -> Result<Vec<Object>, OrchestratorError> {
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let obj = serde_json::from_str(&line).map_err(|e| OrchestratorError::Parse {
                path: origin.to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            out.push(obj);
        }
        Ok(out)
    }

    /// Builds a registry from every `*.ndjson` file in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, OrchestratorError> {
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect();
        files.sort();
        let mut reg = Self::new();
        for f in files {
            let reader = std::io::BufReader::new(std::fs::File::open(&f)?);
            for obj in Self::parse_objects(reader, &f.display().to_string())? {
                reg.register(obj)?;
            }
        }
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::Resources;

    fn node(name: &str) -> Node {
        Node { name: name.into(), region: "edge".into(), capacity: Resources::new(1000, 1 << 30) }
    }

    #[test]
    fn crud_errors() {
        let mut r = Registry::new();
        r.register_node(node("a")).unwrap();
        assert!(matches!(r.register_node(node("a")), Err(OrchestratorError::Duplicate { .. })));
        assert!(matches!(r.update_node(node("b")), Err(OrchestratorError::Unknown { .. })));
        assert!(matches!(r.delete_source("x"), Err(OrchestratorError::Unknown { .. })));
        let mut bigger = node("a");
        bigger.capacity.cpu_millis = 4000;
        r.update_node(bigger).unwrap();
        assert_eq!(r.node("a").unwrap().capacity.cpu_millis, 4000);
        r.delete_node("a").unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn load_dir_reads_ndjson() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("a.ndjson"),
            "# nodes\n{\"kind\":\"Node\",\"name\":\"e1\",\"region\":\"edge\",\"capacity\":{\"cpu_millis\":1000,\"memory_bytes\":1}}\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("ignored.txt"), "junk").unwrap();
        let r = Registry::load_dir(dir.path()).unwrap();
        assert_eq!(r.nodes().len(), 1);
        std::fs::write(dir.path().join("b.ndjson"), "{\"kind\":\"Nope\"}\n").unwrap();
        assert!(matches!(Registry::load_dir(dir.path()), Err(OrchestratorError::Parse { line: 1, .. })));
    }
}
