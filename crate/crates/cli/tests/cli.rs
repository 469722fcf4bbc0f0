use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &["--set", "paths=40", "--set", "horizon=150", "--set", "restarts=1", "--set", "max_iterations=150"];

fn pairs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairs"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) {
    fs::write(
        dir.join("run.toml"),
        "seed = 5\nsplit_date = \"2013-06-28\"\ndrift_coefficients = [0.0, 0.9]\n\
         diffusion_coefficients = [0.02]\nhedge_ratio = 1.5\nobs_noise_var = 0.005\n",
    )
    .unwrap();
}

fn simulate_panel(dir: &Path, days: &str) {
    let out = pairs(dir, &["--config", "run.toml", "simulate", "--days", days, "--out", "prices.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    simulate_panel(dir.path(), "500");
    let mut args = vec!["--config", "run.toml", "pipeline", "--data", "prices.csv", "--out", "out"];
    args.extend_from_slice(SMALL);
    let out = pairs(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["fit.json", "grid.csv", "grid.json", "filter.csv", "signals.csv", "daily.csv", "report.json"] {
        assert!(dir.path().join("out").join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["empty_test_period"], false);
    assert_eq!(report["band_violations"], 0);
    let train = report["train_days"].as_u64().unwrap();
    let test = report["test_days"].as_u64().unwrap();
    assert_eq!(train + test, 500);
}

#[test]
fn staged_commands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);
    simulate_panel(d, "400");
    let run = |extra: &[&str]| {
        let mut args = vec!["--config", "run.toml"];
        args.extend_from_slice(extra);
        args.extend_from_slice(SMALL);
        let out = pairs(d, &args);
        assert!(out.status.success(), "{:?}: {}", extra, String::from_utf8_lossy(&out.stderr));
        out
    };
    run(&["fit", "--data", "prices.csv", "--out", "fit.json"]);
    run(&["filter", "--data", "prices.csv", "--fit", "fit.json", "--out", "filter.csv"]);
    run(&["optimize-rule", "--fit", "fit.json", "--out", "grid"]);
    run(&["backtest", "--data", "prices.csv", "--fit", "fit.json", "--grid", "grid/grid.json", "--out", "bt"]);
    let filter = fs::read_to_string(d.join("filter.csv")).unwrap();
    assert_eq!(filter.lines().next(), Some("date,mean,variance,loglik_increment"));
    assert_eq!(filter.lines().count(), 401);
    // the standalone filter and the backtest's filter agree
    assert_eq!(filter, fs::read_to_string(d.join("bt/filter.csv")).unwrap());
}

#[test]
fn split_files_are_joined() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("a.csv"), "date,close\n2020-01-02,10\n2020-01-03,11\n2020-01-06,12\n").unwrap();
    fs::write(d.join("b.csv"), "date,close\n2020-01-02,5\n2020-01-06,6\n").unwrap();
    let out = pairs(d, &["filter", "--a", "a.csv", "--b", "b.csv", "--out", "f.csv"]);
    // two joined rows are too few for the OLS start, which is a validation error
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_separate_input_and_numerical_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad_key = pairs(d, &["--set", "sead=1", "simulate", "--out", "x.csv"]);
    assert_eq!(bad_key.status.code(), Some(2));
    let explosive = pairs(d, &["--set", "drift_coefficients=[0.0,3.0]", "simulate", "--out", "x.csv"]);
    assert_eq!(explosive.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&explosive.stderr).contains("non-finite"));
    let usage = pairs(d, &["pipeline"]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn constant_prices_fail_in_the_fit_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("date,A,B\n");
    for day in 1..=28 {
        csv.push_str(&format!("2015-02-{day:02},10,5\n"));
    }
    for day in 1..=31 {
        csv.push_str(&format!("2015-03-{day:02},10,5\n"));
    }
    fs::write(d.join("flat.csv"), csv).unwrap();
    let out = pairs(d, &["pipeline", "--data", "flat.csv", "--out", "out"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `fit`") && err.contains("zero variance"), "{err}");
}

#[test]
fn split_on_last_date_flags_empty_test_period() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);
    simulate_panel(d, "300");
    let last = fs::read_to_string(d.join("prices.csv")).unwrap().lines().last().unwrap()[..10].to_string();
    let split = format!("split_date={last}");
    let mut args = vec!["--config", "run.toml", "--set", &split, "pipeline", "--data", "prices.csv", "--out", "out"];
    args.extend_from_slice(SMALL);
    let out = pairs(d, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["empty_test_period"], true);
    assert_eq!(report["test_days"], 0);
    assert!(report["performance"].is_null());
}
