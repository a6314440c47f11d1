//! End-to-end runs through the library driver and the CLI binary.

use std::path::Path;
use std::process::Command;

use groupwatch::harness::driver::{read_reports, run_stream};
use groupwatch::harness::runconfig::RunConfig;
use groupwatch::harness::synth::{write_csv, SynthSpec};

const SPEC: &str = r#"{
    "seed": 4, "timestamps": 240, "rate": 8, "window": 30,
    "components": [
        {"categorical": [[0.6, 0.4, 0, 0]], "continuous": [{"kind": "normal", "mean": 0, "sd": 1}]},
        {"categorical": [[0, 0, 0.5, 0.5]], "continuous": [{"kind": "uniform", "low": 4, "high": 9}]}],
    "bursts": [{"window": 5, "component": 1, "multiplier": 10}]
}"#;

fn write_stream(dir: &Path) -> SynthSpec {
    let spec = SynthSpec::from_json(SPEC).unwrap();
    let records = spec.generate().unwrap();
    let file = std::fs::File::create(dir.join("stream.csv")).unwrap();
    write_csv(&records, spec.n_categorical(), spec.n_continuous(), file).unwrap();
    spec
}

fn run_config(dir: &Path, extra: &str) -> RunConfig {
    let text = format!(
        "input = stream.csv\noutput = out\ntimestamp = timestamp\ncategorical = cat0\n\
         continuous = x0\nlabel = label\ncomponents = 2\ngrids = 40\nepochs = 10\nseed = 9\n{extra}"
    );
    RunConfig::parse(&text, dir).unwrap()
}

#[test]
fn one_report_per_window() {
    let dir = tempfile::tempdir().unwrap();
    write_stream(dir.path());
    let summary = run_stream(&run_config(dir.path(), "")).unwrap();
    assert_eq!(summary.windows, 8);
    let text = std::fs::read_to_string(dir.path().join("out/reports.jsonl")).unwrap();
    let reports = read_reports(&text).unwrap();
    assert_eq!(reports.len(), 8);
    for (i, r) in reports.iter().enumerate() {
        assert_eq!(r.window, i);
        assert!(r.start <= r.end);
        assert!((r.component_mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(r.wall_ms.is_none());
    }
    for pair in reports.windows(2) {
        assert!(pair[0].end < pair[1].start);
    }
    // the burst window is flagged
    assert!(reports[5].anomaly);
    assert_eq!(summary.records, reports.iter().map(|r| r.records).sum::<usize>());
}

#[test]
fn density_summaries_are_normalized() {
    let dir = tempfile::tempdir().unwrap();
    write_stream(dir.path());
    run_stream(&run_config(dir.path(), "")).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("out/densities.csv")).unwrap();
    let mut integral = [0.0f64; 2];
    let mut mass = [0.0f64; 2];
    for row in rdr.records() {
        let row = row.unwrap();
        let k: usize = row[0].parse().unwrap();
        let width: f64 = row[4].parse().unwrap();
        let density: f64 = row[5].parse().unwrap();
        integral[k] += density * width;
        mass[k] += row[6].parse::<f64>().unwrap();
    }
    for k in 0..2 {
        assert!((integral[k] - 1.0).abs() < 1e-9, "component {k}: {}", integral[k]);
        assert!((mass[k] - 1.0).abs() < 1e-9);
    }
    let top = std::fs::read_to_string(dir.path().join("out/top_units.csv")).unwrap();
    assert!(top.starts_with("component,attribute,rank,unit,probability\n"));
}

#[test]
fn wall_time_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    write_stream(dir.path());
    run_stream(&run_config(dir.path(), "report_wall_time = true\n")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("out/reports.jsonl")).unwrap();
    assert!(read_reports(&text).unwrap().iter().all(|r| r.wall_ms.is_some()));
}

fn groupwatch(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_groupwatch"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

#[test]
fn cli_generate_run_evaluate_bench() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    std::fs::write(cwd.join("spec.json"), SPEC).unwrap();
    let out = groupwatch(&["generate", "--spec", "spec.json", "--out", "stream.csv"], cwd);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(
        cwd.join("run.conf"),
        "input = stream.csv\noutput = out\ntimestamp = timestamp\ncategorical = cat0\ncontinuous = x0\n\
         components = 2\ngrids = 40\nepochs = 10\n",
    )
    .unwrap();
    let out = groupwatch(&["run", "--config", "run.conf"], cwd);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("8 windows"));
    for f in ["reports.jsonl", "dynamics.csv", "timings.csv", "top_units.csv", "densities.csv", "model.json"] {
        assert!(cwd.join("out").join(f).exists(), "{f} missing");
    }

    let out = groupwatch(&["evaluate", "--reports", "out/reports.jsonl", "--data", "stream.csv"], cwd);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ev: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(ev["windows"], 8);
    assert_eq!(ev["positive_windows"], 1);
    assert!(ev["auc_roc"].as_f64().unwrap() > 0.9);

    std::fs::write(
        cwd.join("bench.json"),
        r#"{"stream": {"timestamps": 1, "rate": 4, "arrivals": "fixed",
              "components": [{"categorical": [[1, 0]], "continuous": [{"kind": "normal", "mean": 0, "sd": 1}]},
                             {"categorical": [[0, 1]], "continuous": [{"kind": "normal", "mean": 5, "sd": 1}]}]},
            "model": {"components": 2, "grids": [10], "epochs": 2, "window": 5},
            "windows": 3, "scales": [1, 2], "repeats": 1, "trials": 1, "output": "bench"}"#,
    )
    .unwrap();
    let out = groupwatch(&["bench", "--spec", "bench.json"], cwd);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cwd.join("bench/size_sweep.csv").exists());
}

#[test]
fn cli_reports_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    std::fs::write(cwd.join("stream.csv"), "timestamp,cat0,x0\n2,a,1.0\n1,b,2.0\n").unwrap();
    std::fs::write(
        cwd.join("run.conf"),
        "input = stream.csv\noutput = out\ntimestamp = timestamp\ncategorical = cat0\ncontinuous = x0\n",
    )
    .unwrap();
    let out = groupwatch(&["run", "--config", "run.conf"], cwd);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of order"));

    std::fs::write(cwd.join("bad.conf"), "input = x.csv\nnot_a_key = 3\n").unwrap();
    let out = groupwatch(&["run", "--config", "bad.conf"], cwd);
    assert_eq!(out.status.code(), Some(2));
}
