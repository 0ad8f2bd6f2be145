use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use zerops_core::engine::{
    featurize, recommend, AnomalyFeature, Catalogue, EventBus, PatternGrid, DEFAULT_RESOLUTION, TOPIC_INCIDENTS,
    TOPIC_VERDICTS,
};
use zerops_core::rca::{Incident, RootCauseVerdict};

use crate::detect::{read_ndjson, write_ndjson};
use crate::Outcome;

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct EngineArgs {
    #[command(subcommand)]
    train: Option<EngineCommand>,
    #[command(flatten)]
    run: MatchArgs,
}

#[derive(Debug, Subcommand)]
pub enum EngineCommand {
    /// Train a pattern from journaled incidents and add it to the catalogue.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Action catalogue (NDJSON).
    #[arg(long)]
    catalogue: Option<PathBuf>,
    /// Journal directory holding incidents.ndjson and verdicts.ndjson; actions are appended there.
    #[arg(long)]
    bus_journal: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    catalogue: PathBuf,
    #[arg(long)]
    bus_journal: PathBuf,
    /// Action id the pattern recommends.
    #[arg(long)]
    action: String,
    #[arg(long, default_value = "")]
    description: String,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: u16,
}

fn load_pairs(journal: &std::path::Path) -> Result<Vec<(Incident, RootCauseVerdict)>> {
    let incidents: Vec<Incident> = read_ndjson(&journal.join(format!("{TOPIC_INCIDENTS}.ndjson")))?;
    let verdicts: Vec<RootCauseVerdict> = read_ndjson(&journal.join(format!("{TOPIC_VERDICTS}.ndjson")))?;
    let by_id: BTreeMap<u64, RootCauseVerdict> = verdicts.into_iter().map(|v| (v.incident_id, v)).collect();
    Ok(incidents
        .into_iter()
        .filter_map(|i| by_id.get(&i.id).cloned().map(|v| (i, v)))
        .collect())
}

pub fn run(a: EngineArgs) -> Result<Outcome> {
    match a.train {
        Some(EngineCommand::Train(t)) => train(t),
        None => {
            let (Some(cat), Some(journal)) = (a.run.catalogue, a.run.bus_journal) else {
                bail!("engine needs --catalogue and --bus-journal (or the train subcommand)");
            };
            let catalogue = Catalogue::load(&cat).with_context(|| cat.display().to_string())?;
            let bus = EventBus::with_journal(&journal)?;
            let mut stdout = std::io::stdout().lock();
            let mut n = 0;
            for (inc, v) in load_pairs(&journal)? {
                if let Some(action) = recommend(&catalogue, &inc, &v, Some(&bus))? {
                    write_ndjson(&mut stdout, &action)?;
                    n += 1;
                }
            }
            bus.flush()?;
            eprintln!("{n} recommended actions");
            Ok(Outcome::Ok)
        }
    }
}

fn train(t: TrainArgs) -> Result<Outcome> {
    let mut catalogue = if t.catalogue.exists() {
        Catalogue::load(&t.catalogue).with_context(|| t.catalogue.display().to_string())?
    } else {
        Catalogue::new()
    };
    let features: Vec<AnomalyFeature> =
        load_pairs(&t.bus_journal)?.iter().filter_map(|(i, v)| featurize(i, v)).collect();
    let Some(pattern) = PatternGrid::train(&t.action, &features, t.resolution) else {
        bail!("no usable incident features in {}", t.bus_journal.display());
    };
    catalogue.add_action(&t.action, &t.description);
    catalogue.add_pattern(pattern)?;
    catalogue.save(&t.catalogue).with_context(|| t.catalogue.display().to_string())?;
    eprintln!("trained {:?} from {} features", t.action, features.len());
    Ok(Outcome::Ok)
}
