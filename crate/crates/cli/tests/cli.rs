use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fmbench::ingest::parse_fm_text;

fn fmbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmbench"))
        .args(args)
        .env_remove("FMBENCH_OUT")
        .env_remove("FMBENCH_JOBS")
        .output()
        .expect("binary runs")
}

/// A small tab-separated ratings file: 12 users, 10 items, 3 days.
fn ratings(dir: &Path) -> String {
    let mut body = String::new();
    for u in 1..=12 {
        for i in 1..=10 {
            if (u * 3 + i * 7) % 5 < 3 {
                let r = 1 + (u + 2 * i) % 5;
                body.push_str(&format!("{u}\t{}\t{r}\t{}\n", 100 + i, 86_400 * ((u + i) % 3) + 60));
            }
        }
    }
    let path = dir.join("ratings.tsv");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_report_and_prints_its_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let data = ratings(dir.path());
    let out = dir.path().join("results");
    let o = fmbench(&[
        "run", "--data", &data, "--delim", "tab", "--model", "timesvdpp", "--solver", "mcmc",
        "--dims", "2,3", "--steps", "8", "--folds", "3", "--seed", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["variant"], "timesvdpp");
    assert_eq!(report["config"]["solver"]["steps"], 8);
    assert_eq!(report["results"].as_array().unwrap().len(), 6);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(lines.len(), 2);
    for (line, agg) in lines.iter().zip(report["aggregates"].as_array().unwrap()) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[2].parse::<u64>().unwrap(), agg["dim"].as_u64().unwrap());
        assert_eq!(cols[4].parse::<f64>().unwrap(), agg["mean"].as_f64().unwrap());
        assert_eq!(cols[5].parse::<f64>().unwrap(), agg["std"].as_f64().unwrap());
    }
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(out.join("traces/mcmc_timesvdpp_d3_fold2.csv").exists());
}

#[test]
fn sgd_with_default_grid_searches_every_fold() {
    let dir = tempfile::tempdir().unwrap();
    let data = ratings(dir.path());
    let out = dir.path().join("r");
    let o = fmbench(&[
        "run", "--data", &data, "--model", "mf", "--solver", "sgd", "--grid", "default",
        "--tuning-dim", "2", "--epochs", "4", "--dims", "2", "--folds", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 3 * 8);
}

#[test]
fn out_and_jobs_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = ratings(dir.path());
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_fmbench"))
        .args(["run", "--data", &data, "--dims", "2", "--steps", "3", "--folds", "2"])
        .env("FMBENCH_OUT", &out)
        .env("FMBENCH_JOBS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"jobs\": 2"));
}

#[test]
fn usage_errors_exit_with_2() {
    let o = fmbench(&["run", "--model", "mf"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--data"));
    assert_eq!(fmbench(&["run", "--data", "x", "--solver", "adam"]).status.code(), Some(2));
    assert_eq!(fmbench(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    assert_eq!(fmbench(&["run", "--data", missing.to_str().unwrap()]).status.code(), Some(1));
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "1\t2\tthree\t4\n").unwrap();
    let o = fmbench(&["run", "--data", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    let data = ratings(dir.path());
    let o = fmbench(&["run", "--data", &data, "--model", "u,i,ii"]);
    assert_eq!(o.status.code(), Some(1), "custom variants need the opt-in flag");
}

#[test]
fn tune_emits_the_validation_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = ratings(dir.path());
    let out = dir.path().join("t");
    let o = fmbench(&["tune", "--data", &data, "--tuning-dim", "2", "--epochs", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    let o = fmbench(&[
        "tune", "--data", &data, "--regs", "0.04", "--lrs", "0.003", "--tuning-dim", "2", "--epochs", "3",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("0.04,0.003,"));
}

#[test]
fn tune_on_empty_data_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let o = fmbench(&["tune", "--data", empty.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn export_features_for_three_records() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("three.dat");
    fs::write(&data, "1::10::4::0\n1::11::2::0\n2::10::5::86400\n").unwrap();
    let out = dir.path().join("mf");
    let o = fmbench(&[
        "export-features", "--data", data.to_str().unwrap(), "--delim", "::", "--model", "mf",
        "--folds", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("all.txt")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.split(' ').count() == 3));
    assert_eq!(text.lines().next(), Some("4 0:1 2:1"));

    let out = dir.path().join("svdpp");
    let o = fmbench(&[
        "export-features", "--data", data.to_str().unwrap(), "--delim", "::", "--model", "svdpp",
        "--folds", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let parsed = parse_fm_text(out.join("all.txt")).unwrap();
    // User 1 rated two items, so each implicit entry weighs 1/√2.
    let first = &parsed.rows[0];
    let w = 1.0 / 2f64.sqrt();
    assert_eq!(first.entries, vec![(0, 1.0), (2, 1.0), (4, w), (5, w)]);
    assert_eq!(parsed.rows[2].entries, vec![(1, 1.0), (2, 1.0), (4, 1.0)]);
}

#[test]
fn exported_folds_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = ratings(dir.path());
    let out = dir.path().join("x");
    let o = fmbench(&[
        "export-features", "--data", &data, "--model", "timesvdpp-flipped", "--folds", "3",
        "--implicit", "strict", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut total = 0;
    for f in 0..3 {
        for part in ["train", "test"] {
            let path = out.join(format!("fold{f}_{part}.txt"));
            let parsed = parse_fm_text(&path).unwrap();
            assert!(parsed.warnings.is_empty());
            let again = dir.path().join("again.txt");
            fmbench::ingest::write_fm_text(&again, &parsed.rows).unwrap();
            assert_eq!(fs::read_to_string(&again).unwrap(), fs::read_to_string(&path).unwrap());
            if part == "test" {
                total += parsed.rows.len();
            }
        }
    }
    let n = fs::read_to_string(&data).unwrap().lines().count();
    assert_eq!(total, n);
}
