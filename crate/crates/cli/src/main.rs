//! `zerops`: collect, detect, rank, recommend, orchestrate and benchmark.

mod bench;
mod collect;
mod detect;
mod engine;
mod models;
mod orchestrate;
mod pipeline;

use std::io::IsTerminal;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// Exit status of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// Something could not be scheduled or was infeasible.
    Infeasible,
}

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "zerops", version, about = "Edge AIOps toolkit: metrics collection, streaming anomaly detection, root-cause ranking and remediation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample host counters into a metric stream.
    Collect(collect::CollectArgs),
    /// Run an anomaly detector over a metric stream.
    Detect(detect::DetectArgs),
    /// Group anomaly events into incidents and rank root causes.
    Rca(detect::RcaArgs),
    /// Match incidents against the remediation catalogue, or train patterns.
    Engine(engine::EngineArgs),
    /// Reconcile analysis workloads against data sources and nodes.
    Orchestrate(orchestrate::OrchestrateArgs),
    /// Inspect and edit the model repository.
    #[command(subcommand)]
    Models(models::ModelsCommand),
    /// Overhead and latency experiments.
    #[command(subcommand)]
    Bench(bench::BenchCommand),
    /// Collector or replay -> detectors -> RCA -> engine in one process.
    Pipeline(pipeline::PipelineArgs),
}

pub fn parse_duration(s: &str) -> Result<Duration, String> {
    humantime::parse_duration(s).map_err(|e| format!("invalid duration {s:?}: {e}"))
}

/// Joins the error chain, skipping causes whose text the previous message
/// already includes.
fn render_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.is_empty() && prev.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
        prev = msg;
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("ZEROPS_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();

    let result = match cli.command {
        Command::Collect(a) => collect::run(a),
        Command::Detect(a) => detect::run_detect(a),
        Command::Rca(a) => detect::run_rca(a),
        Command::Engine(a) => engine::run(a),
        Command::Orchestrate(a) => orchestrate::run(a),
        Command::Models(c) => models::run(c),
        Command::Bench(c) => bench::run(c),
        Command::Pipeline(a) => pipeline::run(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
