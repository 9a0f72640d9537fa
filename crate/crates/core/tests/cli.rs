use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "seed = 11
[model]
covariates = [\"age\"]
[sim]
n_subjects = 20
[mcmc]
total_iters = 300
burn_in = 150
adapt_iters = 150
";

fn gpjoint(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpjoint"))
        .current_dir(dir)
        .args(["--threads", "1"])
        .args(args)
        .output()
        .expect("running gpjoint")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn csv_rows(path: &Path) -> Vec<HashMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    rdr.records()
        .map(|r| header.iter().cloned().zip(r.unwrap().iter().map(str::to_string)).collect())
        .collect()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Temp dir holding `run.toml` and a simulated dataset under `sim/`.
fn simulated() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    ok(&gpjoint(dir.path(), &["simulate", "--config", "run.toml", "--out-dir", "sim"]));
    dir
}

#[test]
fn simulate_writes_consistent_files() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("big.toml"), "[sim]\nn_subjects = 300\n").unwrap();
    ok(&gpjoint(dir.path(), &["simulate", "--config", "big.toml", "--seed", "5", "--out-dir", "out"]));
    let out = dir.path().join("out");
    let surv = csv_rows(&out.join("survival.csv"));
    let truth = csv_rows(&out.join("truth.csv"));
    let long = csv_rows(&out.join("longitudinal.csv"));
    assert_eq!(surv.len(), 300);
    assert_eq!(truth.len(), 300);
    assert!((9 * 300..=12 * 300).contains(&long.len()), "{}", long.len());

    let mut per_subject: HashMap<&str, usize> = HashMap::new();
    for r in &long {
        *per_subject.entry(r["subject_id"].as_str()).or_default() += 1;
    }
    assert_eq!(per_subject.len(), 300);
    assert!(per_subject.values().all(|n| (9..=12).contains(n)));

    let m = manifest(&out.join("manifest.json"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let rate = m["achieved_censoring_rate"].as_f64().unwrap();
    assert!((0.15..=0.25).contains(&rate), "{rate}");
    let censored = surv.iter().filter(|r| r["event"] == "0").count();
    assert!((censored as f64 / 300.0 - rate).abs() < 1e-12);
}

#[test]
fn simulate_depends_only_on_seed() {
    let dir = TempDir::new().unwrap();
    for (sub, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        ok(&gpjoint(dir.path(), &["simulate", "--seed", seed, "--out-dir", sub]));
    }
    let read = |sub: &str| fs::read(dir.path().join(sub).join("longitudinal.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn fit_summary_agrees_with_draws() {
    let dir = simulated();
    let out = gpjoint(
        dir.path(),
        &[
            "fit",
            "--config",
            "run.toml",
            "--longitudinal",
            "sim/longitudinal.csv",
            "--survival",
            "sim/survival.csv",
            "--out-dir",
            "fit",
            "--relative-risk",
        ],
    );
    ok(&out);
    let fit = dir.path().join("fit");
    let draws = csv_rows(&fit.join("draws.csv"));
    assert_eq!(draws.len(), 150);
    let summary = csv_rows(&fit.join("summary.csv"));
    for row in &summary {
        for k in ["mean", "median", "sd", "q2.5", "q97.5"] {
            assert!(row[k].parse::<f64>().unwrap().is_finite(), "{row:?}");
        }
    }
    let age = summary
        .iter()
        .find(|r| r["parameter"] == "zeta_s[age]" && r["transform"] == "coef")
        .unwrap();
    let col: Vec<f64> = draws.iter().map(|r| r["zeta_s[age]"].parse().unwrap()).collect();
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    assert!((age["mean"].parse::<f64>().unwrap() - mean).abs() < 1e-9);
    let rr = summary
        .iter()
        .find(|r| r["parameter"] == "zeta_s[age]" && r["transform"] == "rr_per_decrement")
        .unwrap();
    let rr_mean = col.iter().map(|z| (-z).exp()).sum::<f64>() / col.len() as f64;
    assert!((rr["mean"].parse::<f64>().unwrap() - rr_mean).abs() < 1e-9);

    let m = manifest(&fit.join("manifest.json"));
    assert_eq!(m["command"], "fit");
    let accept = m["chain"]["accept_rate"].as_f64().unwrap();
    assert!(accept > 0.0 && accept <= 1.0);

    // Summarising the draws file reproduces the fit's summary.
    let again = gpjoint(dir.path(), &["summarize", "--draws", "fit/draws.csv", "--relative-risk"]);
    ok(&again);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), fs::read_to_string(fit.join("summary.csv")).unwrap());
}

#[test]
fn mismatched_subjects_exit_with_validation_error() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("long.csv"), "subject_id,time_months,value\nA,0,5\nA,1,5.1\nB,0,4\nB,1,4.2\n").unwrap();
    fs::write(dir.path().join("surv.csv"), "subject_id,time_months,event\nA,3,1\nC,2,0\n").unwrap();
    let out = gpjoint(dir.path(), &["fit", "--longitudinal", "long.csv", "--survival", "surv.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('B') && err.contains('C'), "{err}");
}

#[test]
fn bad_config_and_missing_files() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.toml"), "[mcmc]\nleapfrogs = 3\n").unwrap();
    let out = gpjoint(dir.path(), &["simulate", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("leapfrogs"));

    let out = gpjoint(dir.path(), &["summarize", "--draws", "nope.csv"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let dir = simulated();
    let args = [
        "gradcheck",
        "--config",
        "run.toml",
        "--longitudinal",
        "sim/longitudinal.csv",
        "--survival",
        "sim/survival.csv",
    ];
    let good = gpjoint(dir.path(), &args);
    ok(&good);
    let report = String::from_utf8(good.stdout).unwrap();
    assert!(report.contains("result: PASS"), "{report}");
    assert!(report.contains("points: 4"));

    let mut bad_args = args.to_vec();
    bad_args.extend(["--corrupt-gradient", "--out-dir", "gc"]);
    let bad = gpjoint(dir.path(), &bad_args);
    assert_eq!(bad.status.code(), Some(3));
    let report = fs::read_to_string(dir.path().join("gc/gradcheck.txt")).unwrap();
    assert!(report.contains("result: FAIL"));
    assert!(report.contains("worst_coordinate: log_sigma2"), "{report}");
}

#[test]
fn replicate_table_one_layout() {
    let dir = TempDir::new().unwrap();
    let out = gpjoint(
        dir.path(),
        &["replicate", "--table", "t1", "--datasets", "2", "--subjects", "20", "--iters", "200", "--seed", "3"],
    );
    ok(&out);
    let table = csv_rows(&dir.path().join("T1_table.csv"));
    let mut keys: Vec<(String, String)> = table.iter().map(|r| (r["scenario"].clone(), r["method"].clone())).collect();
    keys.sort();
    keys.dedup();
    let expected: Vec<(String, String)> = ["scenario1", "scenario2"]
        .iter()
        .flat_map(|s| ["joint", "joint_poly", "two_stage"].iter().map(move |m| (s.to_string(), m.to_string())))
        .collect();
    assert_eq!(keys, expected);
    assert!(table.iter().all(|r| r["coefficient"] == "value" && r["truth"] == "-0.5"));

    let reps = csv_rows(&dir.path().join("T1_replicates.csv"));
    assert_eq!(reps.len(), 2 * 6);
    let m = manifest(&dir.path().join("manifest.json"));
    assert_eq!((m["table"].as_str(), m["n_datasets"].as_u64()), (Some("T1"), Some(2)));
}
