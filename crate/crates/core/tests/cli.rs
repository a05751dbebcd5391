use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use asyspa_lab::analysis::{read_metrics_csv, METRICS_HEADER};
use asyspa_lab::objective::Dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asyspa-lab"))
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn ring_config(name: &str, algorithm: &str, events: u64) -> String {
    format!(
        r#"{{
        "name": "{name}",
        "seeds": [3],
        "simulate": {{
            "graph": {{"kind": "ring", "n": 5}},
            "algorithm": "{algorithm}",
            "stepsize": {{"kind": "power", "scale": 1.0, "alpha": 0.6}},
            "objective": {{"kind": "abs", "centers": [-2, -1, 0, 3, 7]}},
            "x0": [[10], [10], [10], [10], [10]],
            "timing": {{"tau_min": 1, "tau_max": 2, "tau_delay": 1}},
            "max_events": {events},
            "metrics_every": 10
        }}
    }}"#
    )
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_then_analyze_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "ring.json", &ring_config("ring", "asyspa", 4000));
    let out = exec(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run_dir = tmp.path().join("runs/ring/seed-3");
    for f in ["trace.jsonl", "metrics.csv", "summary.json", "config.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }

    let text = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
    let rows = read_metrics_csv(text.as_bytes()).unwrap();
    assert_eq!(rows[0].k, 0);
    assert!(rows.windows(2).all(|w| w[1].k == w[0].k + 10 || w[1].k > w[0].k));
    let first = rows[0].f_avg_err;
    let tail = &rows[rows.len() - 20..];
    assert!(tail.iter().all(|r| r.f_avg_err < 0.1 * first), "{first} {:?}", tail[0]);

    let out = exec(&["analyze", run_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}\n{}", String::from_utf8_lossy(&out.stdout), stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run_dir.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["metrics_roundtrip_error"].as_f64().unwrap() <= 1e-9);
    assert!(run_dir.join("consensus.csv").exists());

    // Too few relay slots cannot describe the run.
    let out = exec(&["analyze", run_dir.to_str().unwrap(), "--slots", "0"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn synspa_writes_the_same_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "syn.json", &ring_config("syn", "synspa", 1000));
    let out = exec(&["run", cfg.to_str().unwrap(), "--out", tmp.path().join("elsewhere").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let dir = tmp.path().join("elsewhere/syn/seed-3");
    let rows = read_metrics_csv(fs::File::open(dir.join("metrics.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.l_gap == 0));
    assert!(exec(&["analyze", dir.to_str().unwrap()]).status.success());
}

#[test]
fn malformed_configs_exit_2_with_the_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = ring_config("bad", "asyspa", 10).replace("\"max_events\"", "\"max_event\"");
    let cfg = write(tmp.path(), "bad.json", &bad);
    let out = exec(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("simulate"), "{}", stderr(&out));

    let cfg = write(tmp.path(), "syntax.json", "{ \"simulate\": ");
    assert_eq!(exec(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));

    let bad = ring_config("bad", "hurry", 10);
    let cfg = write(tmp.path(), "alg.json", &bad);
    let out = exec(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("simulate.algorithm"), "{}", stderr(&out));

    // A disconnected graph is caught before anything runs.
    let bad = ring_config("bad", "asyspa", 10)
        .replace(r#"{"kind": "ring", "n": 5}"#, r#"{"kind": "edges", "n": 5, "edges": [[0, 1], [1, 0]]}"#);
    let cfg = write(tmp.path(), "graph.json", &bad);
    assert_eq!(exec(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(exec(&["run", tmp.path().join("missing.json").to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(exec(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn thread_cap_must_be_a_number() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "ring.json", &ring_config("ring", "asyspa", 10));
    let out = bin().env("ASYSPA_LAB_THREADS", "lots").args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().env("ASYSPA_LAB_THREADS", "1").args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
}

#[test]
fn seeds_run_in_parallel_and_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ring_config("multi", "asyspa", 500).replace("\"seeds\": [3]", "\"seeds\": [1, 2, 1]");
    let cfg = write(tmp.path(), "multi.json", &text);
    let out = bin().env("ASYSPA_LAB_THREADS", "3").args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let a = fs::read(tmp.path().join("runs/multi/seed-1/trace.jsonl")).unwrap();
    let b = fs::read(tmp.path().join("runs/multi/seed-2/trace.jsonl")).unwrap();
    assert_ne!(a, b);
    let out = exec(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(a, fs::read(tmp.path().join("runs/multi/seed-1/trace.jsonl")).unwrap());
}

#[test]
fn gen_data_shape_determinism_and_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let p1 = tmp.path().join("a.csv");
    let p2 = tmp.path().join("b.csv");
    for p in [&p1, &p2] {
        let out = exec(&["gen-data", "--n-s", "2000", "--n-f", "10", "--n-c", "3", "--seed", "1", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let bytes = fs::read(&p1).unwrap();
    assert_eq!(bytes, fs::read(&p2).unwrap());
    let ds = Dataset::read_csv(bytes.as_slice(), None).unwrap();
    assert_eq!((ds.len(), ds.n_features()), (2000, 10));
    assert_eq!(ds.n_classes(), 3);
    assert!(ds.labels().iter().all(|&l| l < 3));

    let out = exec(&["gen-data", "--n-s", "10", "--n-f", "2", "--n-c", "1", "--out", p1.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let unwritable = tmp.path().join("no/such/dir/x.csv");
    let out = exec(&["gen-data", "--n-s", "10", "--n-f", "2", "--n-c", "2", "--out", unwritable.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

fn logistic_config(name: &str, graph: &str, algorithm: &str, timing: &str, events: u64) -> String {
    format!(
        r#"{{
        "name": "{name}",
        "simulate": {{
            "graph": {graph},
            "algorithm": "{algorithm}",
            "stepsize": {{"kind": "constant", "scale": 0.002}},
            "objective": {{"kind": "logistic", "data": {{"csv": {{"path": "data.csv"}}}}}},
            "timing": {timing},
            "max_events": {events},
            "metrics_every": 5
        }}
    }}"#
    )
}

#[test]
fn compare_reports_speedups() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.csv");
    let out = exec(&["gen-data", "--n-s", "300", "--n-f", "4", "--n-c", "3", "--seed", "5", "--out", data.to_str().unwrap()]);
    assert!(out.status.success());

    // One node crunching every row takes six times as long per update as
    // each of six nodes holding a sixth of the rows.
    let central = logistic_config(
        "central",
        r#"{"kind": "single"}"#,
        "asyspa",
        r#"{"tau_min": 6, "tau_max": 6, "activation": {"rule": "periods", "periods": [6]}}"#,
        3000,
    );
    let six = logistic_config(
        "six",
        r#"{"kind": "ring_plus_k", "n": 6, "k": 2}"#,
        "asyspa",
        r#"{"tau_min": 0.8, "tau_max": 1.2, "tau_delay": 0.2}"#,
        18000,
    );
    let c = write(tmp.path(), "central.json", &central);
    let s = write(tmp.path(), "six.json", &six);
    let json = tmp.path().join("cmp.json");
    let out = exec(&["compare", c.to_str().unwrap(), s.to_str().unwrap(), "--threshold", "1e-2", "--json", json.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert_eq!(table[0]["speedup"], 1.0);
    let speedup = table[1]["speedup"].as_f64().expect("both runs reach the threshold");
    assert!(speedup > 1.0, "{speedup}");

    // Identical inputs give speedup 1.
    let dir = tmp.path().join("runs/central/seed-0");
    let out = exec(&["compare", dir.to_str().unwrap(), dir.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert!(out.status.success());
    let table: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert_eq!(table[1]["speedup"], 1.0);

    // An unreachable threshold shows up as infinity with a flag.
    let out = exec(&["compare", dir.to_str().unwrap(), dir.to_str().unwrap(), "--threshold=-1"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success() && stdout.contains('∞') && stdout.contains("not reached"), "{stdout}");

    assert_eq!(exec(&["compare", dir.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn gensubgrad_config_writes_a_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "gen.json",
        r#"{
            "name": "inc",
            "gensubgrad": {
                "schedule": {"kind": "cyclic_incremental"},
                "stepsize": {"kind": "power", "scale": 1.0, "alpha": 1.0},
                "objective": {"kind": "abs", "centers": [-1, 0, 2]},
                "x0": [5.0],
                "steps": 3000,
                "record_every": 100
            }
        }"#,
    );
    let out = exec(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(tmp.path().join("runs/inc/seed-0/series.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("k,f_err,dist2"));
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(last[1] < 1e-2 && last[2] < 1e-4, "{last:?}");
}
