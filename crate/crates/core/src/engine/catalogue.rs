use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AnomalyFeature, PatternGrid};

pub const DEFAULT_SCORE_FLOOR: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CatalogueError {
    #[error("catalogue line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("pattern references unknown action {0:?}")]
    UnknownAction(String),
    #[error("catalogue i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDef {
    pub id: String,
    pub description: String,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Action { action: ActionDef },
    Pattern { pattern: PatternGrid },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub action: String,
    pub score: f64,
}

/// Expert-provided remediation actions and their trained patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalogue {
    actions: BTreeMap<String, String>,
    patterns: Vec<PatternGrid>,
    floor: f64,
}

impl Default for Catalogue {
    fn default() -> Self {
        Self { actions: BTreeMap::new(), patterns: Vec::new(), floor: DEFAULT_SCORE_FLOOR }
    }
}

impl Catalogue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn add_action(&mut self, id: impl Into<String>, description: impl Into<String>) -> &mut Self {
        self.actions.insert(id.into(), description.into());
        self
    }

    pub fn add_pattern(&mut self, pattern: PatternGrid) -> Result<&mut Self, CatalogueError> {
        if !self.actions.contains_key(pattern.action()) {
            return Err(CatalogueError::UnknownAction(pattern.action().to_string()));
        }
        self.patterns.push(pattern);
        Ok(self)
    }

    pub fn actions(&self) -> &BTreeMap<String, String> {
        &self.actions
    }

    pub fn patterns(&self) -> &[PatternGrid] {
        &self.patterns
    }

    /// Highest-scoring action at or above the floor; ties go to the smaller action id.
    pub fn best_match(&self, feature: &AnomalyFeature) -> Option<Match> {
        if feature.degenerate {
            return None;
        }
        let mut best: Option<Match> = None;
        for p in &self.patterns {
            let score = p.score(&feature.values);
            let better = match &best {
                None => true,
                Some(b) => score > b.score || (score == b.score && p.action() < b.action.as_str()),
            };
            if better {
                best = Some(Match { action: p.action().to_string(), score });
            }
        }
        best.filter(|m| m.score >= self.floor)
    }

    pub fn from_ndjson(reader: impl BufRead) -> Result<Self, CatalogueError> {
        let mut cat = Self::new();
        let mut patterns = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| CatalogueError::Parse { line: i + 1, reason: e.to_string() })?;
            match parsed {
                Line::Action { action } => {
                    cat.add_action(action.id, action.description);
                }
                Line::Pattern { pattern } => patterns.push(pattern),
            }
        }
        for p in patterns {
            cat.add_pattern(p)?;
        }
        Ok(cat)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogueError> {
        Self::from_ndjson(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write_ndjson(&self, mut w: impl Write) -> std::io::Result<()> {
        for (id, description) in &self.actions {
            let line = Line::Action { action: ActionDef { id: id.clone(), description: description.clone() } };
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
        for p in &self.patterns {
            serde_json::to_writer(&mut w, &Line::Pattern { pattern: p.clone() })?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ndjson(&mut f)?;
        f.flush()
    }
}

/// Catalogue snapshot shared across threads; updates swap it atomically.
#[derive(Debug, Clone, Default)]
pub struct SharedCatalogue(Arc<RwLock<Arc<Catalogue>>>);

impl SharedCatalogue {
    pub fn new(c: Catalogue) -> Self {
        Self(Arc::new(RwLock::new(Arc::new(c))))
    }

    pub fn snapshot(&self) -> Arc<Catalogue> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn replace(&self, c: Catalogue) {
        *self.0.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(c);
    }
}
