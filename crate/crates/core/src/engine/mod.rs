//! Remediation recommendation by density-grid pattern matching, plus the
//! in-process event bus that carries anomaly, incident and action events.

mod bus;
mod catalogue;
mod grid;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

pub use bus::{BusError, EventBus, Subscription};
pub use catalogue::{Catalogue, CatalogueError, Match, SharedCatalogue, DEFAULT_SCORE_FLOOR};
pub use grid::{cell_of, featurize, AnomalyFeature, PatternGrid, DEFAULT_RESOLUTION};

use crate::rca::{Incident, RootCauseVerdict};

pub const TOPIC_ANOMALIES: &str = "anomalies";
pub const TOPIC_INCIDENTS: &str = "incidents";
pub const TOPIC_VERDICTS: &str = "verdicts";
pub const TOPIC_ACTIONS: &str = "actions";

/// Engine output published on [`TOPIC_ACTIONS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedAction {
    pub incident_id: u64,
    pub component: String,
    pub action: String,
    pub score: f64,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// Featurizes the incident's rank-1 component, matches it against the
/// catalogue and publishes the recommendation, if any.
pub fn recommend(
    catalogue: &Catalogue,
    incident: &Incident,
    verdict: &RootCauseVerdict,
    bus: Option<&EventBus>,
) -> Result<Option<RecommendedAction>, EngineError> {
    let Some(feature) = featurize(incident, verdict) else {
        return Ok(None);
    };
    if feature.degenerate {
        info!(incident = verdict.incident_id, "degenerate feature, no match attempted");
        return Ok(None);
    }
    let Some(m) = catalogue.best_match(&feature) else {
        info!(incident = verdict.incident_id, component = %feature.component, "no catalogue match");
        return Ok(None);
    };
    let action = RecommendedAction {
        incident_id: verdict.incident_id,
        component: feature.component.0.clone(),
        action: m.action,
        score: m.score,
    };
    if let Some(bus) = bus {
        bus.publish(TOPIC_ACTIONS, &action)?;
    }
    execute(&action);
    Ok(Some(action))
}

/// Actions are recommendations only; execution is a logged no-op.
pub fn execute(action: &RecommendedAction) {
    info!(
        incident = action.incident_id,
        component = %action.component,
        action = %action.action,
        score = action.score,
        "recommended remediation"
    );
}
