use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rca::{Incident, RootCauseVerdict};
use crate::stream::ComponentId;

pub const DEFAULT_RESOLUTION: u16 = 8;

/// Unit-norm mean per-metric error of an incident's root-cause component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFeature {
    pub component: ComponentId,
    pub values: Vec<f64>,
    /// Set when the mean error was the zero vector.
    pub degenerate: bool,
}

impl AnomalyFeature {
    /// Averages the error vectors and normalizes to unit L2 norm.
    pub fn from_errors<'a>(component: ComponentId, errors: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut sum: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for e in errors {
            if sum.is_empty() {
                sum = vec![0.0; e.len()];
            }
            for (s, v) in sum.iter_mut().zip(e) {
                *s += v;
            }
            n += 1;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n.max(1) as f64).collect();
        Self::from_vector(component, mean)
    }

    pub fn from_vector(component: ComponentId, mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let degenerate = !(norm > 0.0 && norm.is_finite());
        if degenerate {
            values.iter_mut().for_each(|v| *v = 0.0);
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self { component, values, degenerate }
    }
}

/// Builds the feature of the verdict's rank-1 component. `None` if the
/// verdict ranks no component present in the incident.
pub fn featurize(incident: &Incident, verdict: &RootCauseVerdict) -> Option<AnomalyFeature> {
    let root = verdict.ranking.first()?;
    let events = incident.events.get(root)?;
    Some(AnomalyFeature::from_errors(root.clone(), events.iter().map(|e| e.per_metric_error.as_slice())))
}

/// Grid cell of a feature: `⌊(f+1)/2 · r⌋` per dimension, clamped to `[0, r-1]`.
pub fn cell_of(values: &[f64], resolution: u16) -> Vec<u16> {
    let r = f64::from(resolution);
    values
        .iter()
        .map(|&f| {
            let idx = ((f + 1.0) / 2.0 * r).floor();
            if idx.is_nan() {
                0
            } else {
                idx.clamp(0.0, r - 1.0) as u16
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellDensity {
    cell: Vec<u16>,
    density: f64,
}

/// Sparse density grid trained from the features of one action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PatternRepr", try_from = "PatternRepr")]
pub struct PatternGrid {
    action: String,
    resolution: u16,
    cells: BTreeMap<Vec<u16>, f64>,
}

#[derive(Serialize, Deserialize)]
struct PatternRepr {
    action: String,
    resolution: u16,
    cells: Vec<CellDensity>,
}

impl From<PatternGrid> for PatternRepr {
    fn from(p: PatternGrid) -> Self {
        Self {
            action: p.action,
            resolution: p.resolution,
            cells: p.cells.into_iter().map(|(cell, density)| CellDensity { cell, density }).collect(),
        }
    }
}

impl TryFrom<PatternRepr> for PatternGrid {
    type Error = String;

    fn try_from(r: PatternRepr) -> Result<Self, Self::Error> {
        if r.resolution == 0 {
            return Err("resolution must be positive".into());
        }
        let mut cells = BTreeMap::new();
        for c in r.cells {
            if !(c.density >= 0.0 && c.density.is_finite()) {
                return Err(format!("invalid density {}", c.density));
            }
            if c.cell.iter().any(|&i| i >= r.resolution) {
                return Err(format!("cell {:?} outside resolution {}", c.cell, r.resolution));
            }
            *cells.entry(c.cell).or_insert(0.0) += c.density;
        }
        if !cells.values().any(|&d| d > 0.0) {
            return Err("pattern has no nonzero cell".into());
        }
        Ok(Self { action: r.action, resolution: r.resolution, cells })
    }
}

impl PatternGrid {
    /// One count per feature in its cell, normalized to sum 1. Degenerate
    /// features are skipped; `None` if nothing usable remains.
    pub fn train(action: impl Into<String>, features: &[AnomalyFeature], resolution: u16) -> Option<Self> {
        assert!(resolution > 0, "resolution must be positive");
        let mut cells: BTreeMap<Vec<u16>, f64> = BTreeMap::new();
        let mut n = 0usize;
        for f in features.iter().filter(|f| !f.degenerate) {
            *cells.entry(cell_of(&f.values, resolution)).or_insert(0.0) += 1.0;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        cells.values_mut().for_each(|d| *d /= n as f64);
        Some(Self { action: action.into(), resolution, cells })
    }

    pub fn action(&self) -> &str {
        &self.action
    }

    pub fn resolution(&self) -> u16 {
        self.resolution
    }

    pub fn cells(&self) -> &BTreeMap<Vec<u16>, f64> {
        &self.cells
    }

    /// Density of the feature's cell plus half the density of each cell one
    /// step away along a single axis.
    pub fn score(&self, feature: &[f64]) -> f64 {
        let target = cell_of(feature, self.resolution);
        self.cells
            .iter()
            .map(|(cell, &density)| {
                if cell.len() != target.len() {
                    return 0.0;
                }
                let mut diff = cell.iter().zip(&target).filter(|(a, b)| a != b);
                match (diff.next(), diff.next()) {
                    (None, _) => density,
                    (Some((a, b)), None) if a.abs_diff(*b) == 1 => 0.5 * density,
                    _ => 0.0,
                }
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iftm::{AnomalyEvent, DetectorKind};

    fn feat(v: Vec<f64>) -> AnomalyFeature {
        AnomalyFeature::from_vector("n".into(), v)
    }

    #[test]
    fn single_event_feature_is_normalized() {
        let f = AnomalyFeature::from_errors("n".into(), [[3.0, 4.0].as_slice()]);
        assert_eq!(f.values, vec![0.6, 0.8]);
        assert!(!f.degenerate);
    }

    #[test]
    fn two_orthogonal_events_average() {
        let mut a = vec![0.0; 28];
        let mut b = vec![0.0; 28];
        a[0] = 1.0;
        b[1] = 1.0;
        let f = AnomalyFeature::from_errors("n".into(), [a.as_slice(), b.as_slice()]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((f.values[0] - h).abs() < 1e-15 && (f.values[1] - h).abs() < 1e-15);
        assert!(f.values[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_is_degenerate() {
        let f = AnomalyFeature::from_errors("n".into(), [[0.0, 0.0].as_slice()]);
        assert!(f.degenerate);
        assert_eq!(f.values, vec![0.0, 0.0]);
    }

    #[test]
    fn featurize_uses_rank_one() {
        let mk = |c: &str, e: Vec<f64>| AnomalyEvent {
            component: c.into(),
            timestamp: 0,
            detector: DetectorKind::Arima,
            error: 1.0,
            threshold: 0.0,
            per_metric_error: e,
        };
        let mut inc = Incident { id: 1, start_ns: 0, end_ns: 0, events: BTreeMap::new() };
        inc.events.insert("a".into(), vec![mk("a", vec![1.0, 0.0])]);
        inc.events.insert("b".into(), vec![mk("b", vec![0.0, 1.0])]);
        let v = RootCauseVerdict { incident_id: 1, ranking: vec!["b".into(), "a".into()], onsets: BTreeMap::new() };
        let f = featurize(&inc, &v).unwrap();
        assert_eq!(f.component, ComponentId::from("b"));
        assert_eq!(f.values, vec![0.0, 1.0]);
    }

    #[test]
    fn binning_edges() {
        assert_eq!(cell_of(&[-1.0, 1.0, 0.0, -0.76, 0.2499], 8), vec![0, 7, 4, 0, 4]);
        assert_eq!(cell_of(&[-0.75, 0.25], 8), vec![1, 5]);
    }

    #[test]
    fn training_densities() {
        let a = feat(vec![1.0, 0.0]);
        let b = feat(vec![0.0, 1.0]);
        let single = PatternGrid::train("x", std::slice::from_ref(&a), 8).unwrap();
        assert_eq!(single.cells().values().copied().collect::<Vec<_>>(), vec![1.0]);
        let twin = PatternGrid::train("x", &[a.clone(), a.clone()], 8).unwrap();
        assert_eq!(twin.cells().len(), 1);
        let two = PatternGrid::train("x", &[a.clone(), b], 8).unwrap();
        assert_eq!(two.cells().values().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
        assert_eq!(single.score(&a.values), 1.0);
        assert!(PatternGrid::train("x", &[feat(vec![0.0])], 8).is_none());
    }

    #[test]
    fn neighbor_weighting() {
        let p = PatternGrid::train("x", &[feat(vec![1.0, 0.0])], 8).unwrap();
        // cell (7, 4); (6, 4) is an axis neighbor, (6, 3) is diagonal.
        assert_eq!(p.score(&[0.7, 0.1]), 0.5);
        assert_eq!(p.score(&[0.7, -0.1]), 0.0);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let p = PatternGrid::train("restart", &[feat(vec![1.0, 0.0])], 8).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"cells\":[{\"cell\":[7,4],\"density\":1.0}]"), "{s}");
        assert_eq!(serde_json::from_str::<PatternGrid>(&s).unwrap(), p);
        let bad = r#"{"action":"a","resolution":8,"cells":[{"cell":[9],"density":1.0}]}"#;
        assert!(serde_json::from_str::<PatternGrid>(bad).is_err());
        let empty = r#"{"action":"a","resolution":8,"cells":[]}"#;
        assert!(serde_json::from_str::<PatternGrid>(empty).is_err());
    }
}
