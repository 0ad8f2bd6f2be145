use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use zerops_core::bench::{
    budget_table, generate_dataset, jit_plot_rows, read_csv_file, run_budget_sweep, run_frequency_sweep,
    run_jit_check, write_csv_file, BudgetCsvRow, CpuBudget, FreqCsvRow, Injection, JitConfig, JitCsvRow,
    JitWorkload, SyntheticSpec, BUDGET_CSV_NOTE, BUDGET_HEADER, FREQ_HEADER, JIT_HEADER,
};
use zerops_core::collector::SourceKind;
use zerops_core::iftm::{DetectorKind, DetectorParams};
use zerops_core::pipeline::scenario::FaultScenario;
use zerops_core::stream::csv::encode_csv;
use zerops_core::stream::{open_sink, Endpoint, MetricHeader, Sample};

use crate::{parse_duration, Outcome};

pub const FREQ_CSV: &str = "freq.csv";
pub const BUDGET_CSV: &str = "budget.csv";
pub const JIT_CSV: &str = "jit.csv";

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Collector CPU and memory overhead per collection interval.
    FreqSweep(FreqArgs),
    /// Detector ms/sample under decreasing CPU budgets.
    BudgetSweep(BudgetArgs),
    /// Whether a live collector and detector keep up with each other.
    Jit(JitArgs),
    /// Merge result CSVs into the per-figure axis layouts.
    Plotdata(PlotArgs),
    /// Write a seeded synthetic dataset.
    Dataset(DatasetArgs),
    /// Write the two-component fault scenario used for end-to-end runs.
    Scenario(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct FreqArgs {
    #[arg(long)]
    out: PathBuf,
    /// Run length per interval.
    #[arg(long, default_value = "60s", value_parser = parse_duration)]
    duration: Duration,
    /// Comma-separated intervals; default 100ms to 1s in 100ms steps.
    #[arg(long, value_delimiter = ',', value_parser = parse_duration)]
    intervals: Vec<Duration>,
    /// Replay a raw counter trace instead of reading /proc.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Dataset length, warmup included.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DetectorKind::ALL)]
    algos: Vec<DetectorKind>,
    /// Comma-separated budgets in (0, 1]; default 1.0 down to 0.1.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<f64>,
    #[arg(long, default_value = "")]
    params: String,
}

#[derive(Debug, Args)]
pub struct JitArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "500ms", value_parser = parse_duration)]
    intervals: Vec<Duration>,
    #[arg(long, default_value = "10m", value_parser = parse_duration)]
    duration: Duration,
    #[arg(long, value_delimiter = ',', default_value = "birch,arima")]
    algos: Vec<DetectorKind>,
    /// Use a detector that spins this long per sample instead of a real one.
    #[arg(long, value_parser = parse_duration, conflicts_with = "algos")]
    busy: Option<Duration>,
    #[arg(long, default_value = "")]
    params: String,
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Directory holding freq.csv, budget.csv and jit.csv (any subset).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Output file; `.csv` selects CSV, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Level shift as ONSET:DURATION:METRIC[+METRIC...]:SIGMA, repeatable.
    #[arg(long, value_parser = parse_injection)]
    inject: Vec<Injection>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Output sample file; `.csv` selects CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the dependency model here.
    #[arg(long)]
    deps: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Omit the fault.
    #[arg(long)]
    clean: bool,
}

fn parse_injection(s: &str) -> Result<Injection, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [onset, duration, metrics, sigma] = parts[..] else {
        return Err(format!("{s:?} is not ONSET:DURATION:METRICS:SIGMA"));
    };
    let num = |v: &str| v.parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok(Injection {
        onset: num(onset)?,
        duration: num(duration)?,
        metrics: metrics.split('+').map(num).collect::<Result<_, _>>()?,
        shift_sigma: sigma.parse().map_err(|e| format!("{sigma:?}: {e}"))?,
    })
}

fn source(replay: Option<PathBuf>) -> SourceKind {
    replay.map_or(SourceKind::OsCounters, SourceKind::Replay)
}

fn write_samples(path: &Path, header: &MetricHeader, samples: &[Sample]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "csv") {
        std::fs::write(path, encode_csv(header, samples)?).with_context(|| path.display().to_string())?;
    } else {
        let mut sink = open_sink(&Endpoint::File(path.to_path_buf()), header)?;
        for s in samples {
            sink.write(s)?;
        }
        sink.flush()?;
    }
    Ok(())
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())
}

pub fn run(c: BenchCommand) -> Result<Outcome> {
    match c {
        BenchCommand::FreqSweep(a) => {
            out_dir(&a.out)?;
            let intervals = if a.intervals.is_empty() {
                (1..=10).map(|i| Duration::from_millis(100 * i)).collect()
            } else {
                a.intervals
            };
            let rows = run_frequency_sweep(&intervals, a.duration, &source(a.replay))?;
            let csv: Vec<FreqCsvRow> = rows.iter().map(FreqCsvRow::from).collect();
            write_csv_file(&a.out.join(FREQ_CSV), None, &csv)?;
            for r in &csv {
                println!("{} ms: cpu {:.3}% mem {:.3}%", r.ms, r.cpu, r.mem);
            }
        }
        BenchCommand::BudgetSweep(a) => {
            out_dir(&a.out)?;
            let params = DetectorParams::parse(&a.params)?;
            let budgets = if a.budgets.is_empty() {
                CpuBudget::sweep()
            } else {
                a.budgets.iter().map(|&b| CpuBudget::new(b)).collect::<Result<_, _>>().map_err(anyhow::Error::msg)?
            };
            let (_, samples) = generate_dataset(&SyntheticSpec::new(a.samples, a.seed));
            let rows = run_budget_sweep(&a.algos, &budgets, &params, &samples)?;
            let table = budget_table(&rows);
            write_csv_file(&a.out.join(BUDGET_CSV), Some(BUDGET_CSV_NOTE), &table)?;
            for r in &rows {
                println!("{} @ {:.2}: {:.4} ms/sample (sd {:.4})", r.algorithm, r.budget, r.mean_ms, r.std_ms);
            }
        }
        BenchCommand::Jit(a) => {
            out_dir(&a.out)?;
            let params = DetectorParams::parse(&a.params)?;
            let workloads: Vec<JitWorkload> = match a.busy {
                Some(d) => vec![JitWorkload::BusyLoop(d)],
                None => a.algos.iter().map(|&k| JitWorkload::Detector(k, params.clone())).collect(),
            };
            let src = source(a.replay);
            let mut rows = Vec::new();
            for &interval in &a.intervals {
                for w in &workloads {
                    let report = run_jit_check(&JitConfig {
                        interval,
                        duration: a.duration,
                        workload: w.clone(),
                        source: src.clone(),
                    })?;
                    println!(
                        "{} @ {} ms: {} (max depth {}, combined cpu {:.2}%)",
                        report.workload,
                        interval.as_millis(),
                        if report.pass { "pass" } else { "FAIL" },
                        report.max_depth,
                        report.combined_cpu * 100.0
                    );
                    if !report.pass {
                        println!("backlog: {:?}", report.backlog);
                    }
                    rows.push(JitCsvRow::from(&report));
                }
            }
            write_csv_file(&a.out.join(JIT_CSV), None, &rows)?;
            if rows.iter().any(|r| !r.pass) {
                return Ok(Outcome::Infeasible);
            }
        }
        BenchCommand::Plotdata(a) => {
            out_dir(&a.out)?;
            let mut wrote = 0;
            let freq = a.input.join(FREQ_CSV);
            if freq.exists() {
                let rows: Vec<FreqCsvRow> = read_csv_file(&freq, &FREQ_HEADER)?;
                write_csv_file(&a.out.join("fig2.csv"), None, &rows)?;
                wrote += 1;
            }
            let budget = a.input.join(BUDGET_CSV);
            if budget.exists() {
                let rows: Vec<BudgetCsvRow> = read_csv_file(&budget, &BUDGET_HEADER)?;
                write_csv_file(&a.out.join("fig3.csv"), Some(BUDGET_CSV_NOTE), &rows)?;
                wrote += 1;
            }
            let jit = a.input.join(JIT_CSV);
            if jit.exists() {
                let rows: Vec<JitCsvRow> = read_csv_file(&jit, &JIT_HEADER)?;
                write_csv_file(&a.out.join("fig4.csv"), None, &jit_plot_rows(&rows))?;
                wrote += 1;
            }
            if wrote == 0 {
                bail!("no {FREQ_CSV}, {BUDGET_CSV} or {JIT_CSV} in {}", a.input.display());
            }
        }
        BenchCommand::Dataset(a) => {
            let mut spec = SyntheticSpec::new(a.samples, a.seed);
            spec.injections = a.inject;
            spec.validate().map_err(anyhow::Error::msg)?;
            let (header, samples) = generate_dataset(&spec);
            write_samples(&a.out, &header, &samples)?;
        }
        BenchCommand::Scenario(a) => {
            let mut sc = FaultScenario::new(a.seed);
            if a.clean {
                sc = sc.clean();
            }
            let (header, samples) = sc.samples();
            write_samples(&a.out, &header, &samples)?;
            if let Some(p) = &a.deps {
                let f = std::fs::File::create(p).with_context(|| p.display().to_string())?;
                sc.dependencies().write_ndjson(std::io::BufWriter::new(f))?;
            }
        }
    }
    Ok(Outcome::Ok)
}
