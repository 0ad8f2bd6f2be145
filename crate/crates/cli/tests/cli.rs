use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn zerops(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zerops"))
        .args(args)
        .current_dir(cwd)
        .env("ZEROPS_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = zerops(args, cwd);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn ndjson(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn help_and_version_exit_zero_usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(zerops(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(zerops(&["--version"], dir.path()).status.code(), Some(0));
    assert_eq!(zerops(&["bench", "jit", "--help"], dir.path()).status.code(), Some(0));
    assert_eq!(zerops(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(zerops(&["detect", "--algo", "svm", "--in", "stdio"], dir.path()).status.code(), Some(1));
    assert_eq!(zerops(&["collect", "--interval", "soon"], dir.path()).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = zerops(&["collect", "--interval", "50ms", "--run-for", "1s", "--out", "file:x.bin"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = zerops(&["rca", "--events", "missing.ndjson"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ndjson"));
}

#[test]
fn pipeline_with_missing_catalogue_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["bench", "scenario", "--out", "s.bin", "--clean"], dir.path());
    let out = zerops(&["pipeline", "--catalogue", "no-such-catalogue.ndjson", "--replay", "file:s.bin"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-catalogue.ndjson"));
}

#[test]
fn train_then_pipeline_recommends_the_trained_action() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["bench", "scenario", "--out", "train.bin", "--deps", "deps.ndjson", "--seed", "101"], d);
    ok(&["detect", "--algo", "arima", "--in", "file:train.bin", "--events", "events.ndjson", "--params", "c=5"], d);
    std::fs::create_dir(d.join("train")).unwrap();
    ok(
        &[
            "rca",
            "--events",
            "events.ndjson",
            "--deps",
            "deps.ndjson",
            "--out",
            "train/verdicts.ndjson",
            "--incidents",
            "train/incidents.ndjson",
        ],
        d,
    );
    let verdicts = ndjson(&d.join("train/verdicts.ndjson"));
    assert_eq!(verdicts.len(), 1);
    assert_eq!(verdicts[0]["ranking"], serde_json::json!(["db", "app"]));
    ok(&["engine", "train", "--catalogue", "cat.ndjson", "--bus-journal", "train", "--action", "restart-db"], d);

    ok(&["bench", "scenario", "--out", "run.bin", "--seed", "7"], d);
    let summary: Value = serde_json::from_str(&ok(
        &[
            "pipeline",
            "--catalogue",
            "cat.ndjson",
            "--deps",
            "deps.ndjson",
            "--replay",
            "file:run.bin",
            "--params",
            "c=5",
            "--journal",
            "journal",
        ],
        d,
    ))
    .unwrap();
    assert_eq!(summary["incidents"], 1);
    let actions = ndjson(&d.join("journal/actions.ndjson"));
    assert_eq!(actions.len(), 1);
    assert_eq!(actions[0]["action"], "restart-db");
    assert_eq!(actions[0]["component"], "db");

    // standalone engine over the pipeline's journal agrees
    let out = ok(&["engine", "--catalogue", "cat.ndjson", "--bus-journal", "journal"], d);
    let action: Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(action["action"], "restart-db");

    ok(&["bench", "scenario", "--out", "clean.bin", "--seed", "7", "--clean"], d);
    let summary: Value = serde_json::from_str(&ok(
        &["pipeline", "--catalogue", "cat.ndjson", "--deps", "deps.ndjson", "--replay", "file:clean.bin", "--params", "c=5"],
        d,
    ))
    .unwrap();
    assert_eq!(summary["incidents"], 0);
    assert_eq!(summary["actions"], serde_json::json!([]));
}

#[test]
fn detect_can_publish_to_a_journaled_topic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["bench", "scenario", "--out", "s.bin"], d);
    ok(
        &["detect", "--algo", "birch", "--in", "file:s.bin", "--events", "topic:anomalies", "--bus-journal", "bus"],
        d,
    );
    let events = ndjson(&d.join("bus/anomalies.ndjson"));
    assert!(!events.is_empty());
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e["seq"], i as u64 + 1);
        assert_eq!(e["detector"], "birch");
    }
    let out = zerops(&["detect", "--algo", "birch", "--in", "file:s.bin", "--events", "topic:anomalies"], d);
    assert_eq!(out.status.code(), Some(2));
}

const OBJECTS: &str = r#"# site
{"kind":"Node","name":"edge-1","region":"eu","capacity":{"cpu_millis":1000,"memory_bytes":1000000000}}
{"kind":"DataSource","name":"db","url":"tcp-connect:10.0.0.5:7000","labels":{"role":"db"},"node":"edge-1"}
{"kind":"AnalysisStep","name":"detect","ingest_selectors":[{"role":"db"}],"workload":"zerops detect --algo {param.algo} --in {source.url}","resources":{"cpu_millis":300,"memory_bytes":1000},"hyperparameters":{"algo":"arima"}}
"#;

#[test]
fn orchestrate_dry_run_plans_and_flags_unschedulable_steps() {
    let dir = tempfile::tempdir().unwrap();
    let objs = dir.path().join("objects");
    std::fs::create_dir(&objs).unwrap();
    std::fs::write(objs.join("site.ndjson"), OBJECTS).unwrap();
    let out = ok(&["orchestrate", "--objects", "objects", "--dry-run", "--once"], dir.path());
    let lines: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["op"], "create");
    assert_eq!(lines[0]["command"], "zerops detect --algo arima --in tcp-connect:10.0.0.5:7000");

    std::fs::write(
        objs.join("big.ndjson"),
        r#"{"kind":"AnalysisStep","name":"big","ingest_selectors":[{"role":"db"}],"workload":"true","resources":{"cpu_millis":900,"memory_bytes":1}}"#,
    )
    .unwrap();
    let out = zerops(&["orchestrate", "--objects", "objects", "--dry-run", "--once"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8(out.stdout).unwrap();
    // both steps want the single node; one of them must be reported
    assert_eq!(stdout.lines().filter(|l| l.contains(r#""op":"unschedulable""#)).count(), 1);
}

#[test]
fn orchestrate_loop_stops_after_run_for() {
    let dir = tempfile::tempdir().unwrap();
    let objs = dir.path().join("objects");
    std::fs::create_dir(&objs).unwrap();
    std::fs::write(objs.join("site.ndjson"), OBJECTS).unwrap();
    let out = ok(&["orchestrate", "--objects", "objects", "--dry-run", "--tick", "100ms", "--run-for", "500ms"], dir.path());
    // created once; later ticks leave the plan unchanged
    assert_eq!(out.lines().filter(|l| l.contains(r#""op":"create""#)).count(), 1);
}

#[test]
fn models_put_get_ls_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("payload.bin"), b"opaque model bytes").unwrap();
    let key = ["--repo", "repo", "--step", "s 1", "--component", "db/a", "--detector", "arima"];
    let put = |d: &Path| ok(&[&["models", "put"][..], &key, &["--file", "payload.bin"]].concat(), d);
    assert_eq!(put(d).trim(), "1");
    assert_eq!(put(d).trim(), "2");
    ok(&[&["models", "get"][..], &key, &["--version", "1", "--out", "back.bin"]].concat(), d);
    assert_eq!(std::fs::read(d.join("back.bin")).unwrap(), b"opaque model bytes");
    let ls = ok(&["models", "ls", "--repo", "repo"], d);
    assert!(ls.contains("s 1/db/a/arima"), "{ls}");
    assert!(ls.contains("latest=2"), "{ls}");
    let out = zerops(&[&["models", "get"][..], &key, &["--version", "9", "--out", "x"]].concat(), d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn collect_replays_a_recorded_trace_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "collect",
            "--interval",
            "100ms",
            "--run-for",
            "600ms",
            "--tags",
            "host=edge1",
            "--out",
            "file:live.bin",
            "--record-trace",
            "trace.ndjson",
            "--report",
            "overhead.csv",
        ],
        d,
    );
    let report = std::fs::read_to_string(d.join("overhead.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("interval_ms,cpu_frac,rss_bytes,samples,wall_s"));
    assert!(lines.next().unwrap().starts_with("100,"));
    let snapshots = std::fs::read_to_string(d.join("trace.ndjson")).unwrap().lines().count();
    assert!(snapshots >= 2);

    ok(&["collect", "--interval", "100ms", "--replay", "trace.ndjson", "--out", "file:replay.csv", "--format", "csv"], d);
    let csv = std::fs::read_to_string(d.join("replay.csv")).unwrap();
    assert!(csv.starts_with("time,tags,cpu.utilization,"));
    assert_eq!(csv.lines().count(), snapshots, "header plus one row per snapshot pair");
}

#[test]
fn bench_outputs_parse_back_and_infeasible_jit_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["bench", "budget-sweep", "--out", "res", "--seed", "3", "--samples", "200", "--budgets", "1.0,0.5"], d);
    ok(&["bench", "freq-sweep", "--out", "res", "--duration", "300ms", "--intervals", "100ms"], d);
    let out = zerops(&["bench", "jit", "--out", "res", "--intervals", "100ms", "--duration", "1s", "--busy", "250ms"], d);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("backlog"));
    ok(&["bench", "plotdata", "--in", "res", "--out", "plots"], d);
    let fig3 = std::fs::read_to_string(d.join("plots/fig3.csv")).unwrap();
    let rows: Vec<&str> = fig3.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "cpu,BIRCH,LSTM,ARIMA");
    assert_eq!(rows.len(), 3);
    assert!(std::fs::read_to_string(d.join("plots/fig2.csv")).unwrap().starts_with("ms,cpu,mem"));
    assert!(std::fs::read_to_string(d.join("plots/fig4.csv")).unwrap().starts_with("ms,cpu,adcpuarima,adcpucabirch"));
}

#[test]
fn dataset_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["bench", "dataset", "--out", "a.csv", "--seed", "9", "--samples", "50", "--inject", "20:5:1+2:6"], d);
    ok(&["bench", "dataset", "--out", "b.csv", "--seed", "9", "--samples", "50", "--inject", "20:5:1+2:6"], d);
    ok(&["bench", "dataset", "--out", "c.csv", "--seed", "10", "--samples", "50"], d);
    let read = |n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
    assert_eq!(zerops(&["bench", "dataset", "--out", "x", "--inject", "1:2:3"], d).status.code(), Some(1));
}
