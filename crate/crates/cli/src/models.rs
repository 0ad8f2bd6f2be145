use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use zerops_core::iftm::{DetectorKind, ModelBlob};
use zerops_core::repo::{ModelKey, ModelRepo};

use crate::Outcome;

#[derive(Debug, Subcommand)]
pub enum ModelsCommand {
    /// List stored keys with their versions.
    Ls {
        #[arg(long)]
        repo: PathBuf,
    },
    /// Write a stored model's payload to a file.
    Get {
        #[command(flatten)]
        key: KeyArgs,
        /// Version to read; latest if omitted.
        #[arg(long)]
        version: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Store a payload file as a new version.
    Put {
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct KeyArgs {
    #[arg(long)]
    repo: PathBuf,
    #[arg(long)]
    step: String,
    #[arg(long)]
    component: String,
    #[arg(long)]
    detector: DetectorKind,
}

impl KeyArgs {
    fn split(self) -> (ModelRepo, ModelKey) {
        (ModelRepo::open(self.repo), ModelKey::new(self.step, self.component, self.detector))
    }
}

pub fn run(c: ModelsCommand) -> Result<Outcome> {
    match c {
        ModelsCommand::Ls { repo } => {
            let repo = ModelRepo::open(repo);
            for key in repo.keys()? {
                let versions = repo.versions(&key)?;
                let latest = repo.get_latest(&key).map(|(v, _)| v.to_string()).unwrap_or_else(|e| format!("error: {e}"));
                println!("{key}\tlatest={latest}\tversions={versions:?}");
            }
        }
        ModelsCommand::Get { key, version, out } => {
            let (repo, key) = key.split();
            let (v, blob) = match version {
                Some(v) => (v, repo.get(&key, v)?),
                None => repo.get_latest(&key)?,
            };
            std::fs::write(&out, &blob.payload).with_context(|| out.display().to_string())?;
            eprintln!("{key} v{v}: {} bytes", blob.payload.len());
        }
        ModelsCommand::Put { key, file } => {
            let (repo, key) = key.split();
            let payload = std::fs::read(&file).with_context(|| file.display().to_string())?;
            let v = repo.put(&key, &ModelBlob { kind: key.detector, payload })?;
            println!("{v}");
        }
    }
    Ok(Outcome::Ok)
}
