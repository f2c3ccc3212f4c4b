use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ldr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldr"))
        .current_dir(dir)
        .env_remove("LDR_SEED")
        .args(args)
        .output()
        .expect("spawn ldr")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = ldr(dir, args);
    assert!(
        out.status.success(),
        "ldr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn manifest(dir: &Path, command: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, &format!("{command}.manifest.json"))).unwrap()
}

fn simulate(dir: &Path, n: &str) {
    ok(
        dir,
        &[
            "--output-dir",
            "sim",
            "simulate",
            "--generator",
            "data1",
            "--n",
            n,
            "--seed",
            "5",
            "--name",
            "d",
        ],
    );
}

const QUICK_GIBBS: [&str; 8] = ["--iterations", "120", "--burnin", "80", "--K", "2", "--seed", "9"];

#[test]
fn simulate_writes_data_metadata_and_manifest() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "50");
    let csv = read(tmp.path(), "sim/d.csv");
    assert!(csv.starts_with("time,event,"));
    assert_eq!(csv.lines().count(), 51);
    let meta: serde_json::Value = serde_json::from_str(&read(tmp.path(), "sim/d.json")).unwrap();
    assert_eq!(meta["n"], 50);
    assert_eq!(meta["J"], 2);
    let m = manifest(&tmp.path().join("sim"), "simulate");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["seed_source"], "flag");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn reruns_with_the_same_seed_are_identical() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    simulate(dir, "80");
    for out in ["a", "b"] {
        let mut args = vec!["--output-dir", out, "fit", "--data", "sim/d.csv"];
        args.extend(QUICK_GIBBS);
        ok(dir, &args);
        ok(
            dir,
            &[
                "--output-dir",
                out,
                "predict",
                "--params",
                &format!("{out}/trace.jsonl"),
                "--draw-stride",
                "8",
                "--data",
                "sim/d.csv",
                "--tau",
                "0.5,1",
                "--n-mc",
                "100",
                "--seed",
                "3",
            ],
        );
    }
    for f in ["params.json", "trace.jsonl", "diagnostics.csv", "cif.csv"] {
        assert_eq!(
            read(dir, &format!("a/{f}")),
            read(dir, &format!("b/{f}")),
            "{f} differs"
        );
    }
}

#[test]
fn seed_from_environment_is_recorded() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ldr"))
        .current_dir(tmp.path())
        .env("LDR_SEED", "17")
        .args(["simulate", "--generator", "data2", "--n", "10"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let m = manifest(tmp.path(), "simulate");
    assert_eq!(m["seed"], 17);
    assert_eq!(m["seed_source"], "env");
}

#[test]
fn missing_seed_is_generated_and_replayable() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &["--output-dir", "first", "simulate", "--generator", "data1", "--n", "30"],
    );
    let m = manifest(&dir.join("first"), "simulate");
    assert_eq!(m["seed_source"], "generated");
    let mut replay: Vec<String> = m["replay_args"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let pos = replay.iter().position(|a| a == "first").unwrap();
    replay[pos] = "second".into();
    let args: Vec<&str> = replay.iter().map(String::as_str).collect();
    ok(dir, &args);
    assert_eq!(read(dir, "first/data.csv"), read(dir, "second/data.csv"));
}

#[test]
fn config_file_seeds_and_configures_fit_and_flags_win() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    simulate(dir, "60");
    fs::write(
        dir.join("run.toml"),
        "seed = 4\nK = 3\n[gibbs]\niterations = 50\nburn_in = 40\nthin = 2\n",
    )
    .unwrap();
    ok(
        dir,
        &[
            "--output-dir",
            "o",
            "fit",
            "--data",
            "sim/d.csv",
            "--config",
            "run.toml",
            "--thin",
            "5",
        ],
    );
    let m = manifest(&dir.join("o"), "fit");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["seed_source"], "config");
    assert_eq!(m["config"]["chain"]["K"], 3);
    assert_eq!(m["config"]["chain"]["iterations"], 50);
    assert_eq!(m["config"]["chain"]["thin"], 5);
    assert_eq!(read(dir, "o/trace.jsonl").lines().count(), 2);
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    simulate(dir, "20");
    fs::write(dir.join("bad.toml"), "[gibbs]\nsweeps = 10\n").unwrap();
    let out = ldr(
        dir,
        &["fit", "--data", "sim/d.csv", "--config", "bad.toml", "--seed", "1"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[usage]"));
}

#[test]
fn map_fit_writes_traces() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    simulate(dir, "100");
    ok(
        dir,
        &[
            "--output-dir",
            "m",
            "fit",
            "--method",
            "map",
            "--data",
            "sim/d.csv",
            "--K",
            "2",
            "--epochs",
            "5",
            "--minibatch",
            "0",
            "--r-prior",
            "vague",
            "--seed",
            "2",
        ],
    );
    let objective = read(dir, "m/objective.csv");
    assert_eq!(objective.lines().count(), 1 + 6);
    assert!(read(dir, "m/trace.csv").starts_with("epoch,minibatch,logP"));
    let m = manifest(&dir.join("m"), "fit");
    assert_eq!(m["config"]["method"], "map");
    assert_eq!(m["config"]["map"]["r_prior"]["kind"], "gamma");
    assert_eq!(m["config"]["map"]["minibatch_size"], serde_json::Value::Null);
}

#[test]
fn multiple_chains_are_stored_separately() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    simulate(dir, "60");
    let mut args = vec!["--output-dir", "c", "fit", "--data", "sim/d.csv", "--chains", "2"];
    args.extend(QUICK_GIBBS);
    ok(dir, &args);
    let a = read(dir, "c/chain0/trace.jsonl");
    let b = read(dir, "c/chain1/trace.jsonl");
    assert_ne!(a, b);
    assert!(dir.join("c/chain1/params.json").exists());
}

#[test]
fn zero_subjects_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = ldr(
        tmp.path(),
        &["simulate", "--generator", "data1", "--n", "0", "--seed", "1"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n must be at least 1"));
}

#[test]
fn bad_flags_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let out = ldr(tmp.path(), &["fit", "--method", "annealing", "--data", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_dataset_is_an_ingestion_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("empty.csv"), "time,event,x1\n").unwrap();
    let out = ldr(
        dir,
        &[
            "fit",
            "--method",
            "map",
            "--data",
            "empty.csv",
            "--risks",
            "2",
            "--seed",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_rows_are_ingestion_errors() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.csv"), "time,event,x1\n1.0,1,0.3\nabc,1,0.2\n").unwrap();
    let out = ldr(dir, &["fit", "--data", "bad.csv", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[ingestion]"));
    let out = ldr(dir, &["fit", "--data", "missing.csv", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn horizon_zero_gives_zero_incidence() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    simulate(dir, "40");
    let mut args = vec!["--output-dir", "f", "fit", "--data", "sim/d.csv"];
    args.extend(QUICK_GIBBS);
    ok(dir, &args);
    ok(
        dir,
        &[
            "--output-dir",
            "f",
            "predict",
            "--params",
            "f/params.json",
            "--data",
            "sim/d.csv",
            "--tau",
            "0",
            "--risk",
            "2",
            "--seed",
            "1",
        ],
    );
    let cif = read(dir, "f/cif.csv");
    let rows: Vec<&str> = cif.lines().skip(1).collect();
    assert_eq!(rows.len(), 40);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[1], "2");
        assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0);
    }
    let out = ldr(
        dir,
        &[
            "predict",
            "--params",
            "f/params.json",
            "--data",
            "sim/d.csv",
            "--tau",
            "1",
            "--risk",
            "3",
            "--seed",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_scores_fully_observed_rows() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    simulate(dir, "120");
    let mut args = vec!["--output-dir", "f", "fit", "--data", "sim/d.csv"];
    args.extend(QUICK_GIBBS);
    ok(dir, &args);
    ok(
        dir,
        &[
            "--output-dir",
            "f",
            "evaluate",
            "--params",
            "f/params.json",
            "--data",
            "sim/d.csv",
            "--metric",
            "brier",
            "--tau",
            "0.5,1.5",
            "--n-mc",
            "200",
            "--seed",
            "1",
        ],
    );
    let metrics = read(dir, "f/metrics.csv");
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "risk,tau,metric,value");
    assert_eq!(lines.len(), 1 + 2 * 2);
    for l in &lines[1..] {
        let v: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    let m = manifest(&dir.join("f"), "evaluate");
    let scored = m["summary"]["scored_rows"].as_u64().unwrap();
    let dropped = m["summary"]["dropped_rows"].as_u64().unwrap();
    assert_eq!(scored + dropped, 120);
}

#[test]
fn single_atom_fit_embeds_one_representative() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let mut csv = String::from("time,event,x1,x2\n");
    for i in 0..30 {
        let (a, b) = ((i % 6) as f64 * 0.3, (i / 6) as f64 * 0.4);
        csv.push_str(&format!("{},1,{a},{b}\n", 0.2 + 0.05 * i as f64));
    }
    fs::write(dir.join("one.csv"), csv).unwrap();
    fs::write(
        dir.join("p.json"),
        r#"{"J":1,"K":1,"r":[[1.5]],"beta":[[[0.1,0.2,-0.3]]]}"#,
    )
    .unwrap();
    ok(
        dir,
        &[
            "embed",
            "--params",
            "p.json",
            "--data",
            "one.csv",
            "--neighbors",
            "6",
            "--n-mc",
            "50",
            "--seed",
            "1",
        ],
    );
    let emb = read(dir, "embedding.csv");
    let reps: Vec<&str> = emb.lines().filter(|l| l.contains(",true,")).collect();
    assert_eq!(reps.len(), 1, "{emb}");
    assert!(reps[0].starts_with("r1s1,true,1,1,"));
    assert_eq!(emb.lines().count(), 1 + 30 + 1);
}
