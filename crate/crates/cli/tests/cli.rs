// SPDX-License-Identifier: MIT OR Apache-2.0

use renewcp_cli::series::SeriesFile;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "\
# two-component white-noise model
prior.kind = geometric
prior.p = 0.1
model.d = 2
model.noise = invgamma
model.nu = 3
model.gamma = 2
model.delta2 = [9, 9]
filter.max_particles = 64
risk.v = [1, 0]
risk.theta = 0.5
simulate.n = 40
simulate.activation_prob = 0.8
seed = 11
";

fn renewcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_renewcp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(dir: &Path, series: &str) -> (String, String) {
    let cfg = dir.join("run.cfg");
    let data = dir.join("series.csv");
    fs::write(&cfg, CONFIG).unwrap();
    fs::write(&data, series).unwrap();
    (path(&cfg).to_string(), path(&data).to_string())
}

#[test]
fn single_row_series() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), "t,a,b\n1,0.3,-0.2\n");
    let out = dir.path().join("out");
    let res = renewcp(&["detect", "--config", &cfg, "--input", &data, "--output", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let last = fs::read_to_string(out.join("last_changepoint.csv")).unwrap();
    assert_eq!(last.lines().nth(1).unwrap(), "1,1,1e0");
    assert_eq!(fs::read_to_string(out.join("marginals.csv")).unwrap(), "t,index,probability\n");
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert_eq!(trace.trim(), r#"{"t":1,"particles":[[1,0.0]]}"#);
}

#[test]
fn blank_rows_and_dates_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let series = "date,a,b\n2024-01-01,0.1,0.2\n2024-01-02,,\n2024-01-04,,3.5\n2024-01-05,4.1,3.9\n";
    let (cfg, data) = setup(dir.path(), series);
    let out = dir.path().join("out");
    let res = renewcp(&["detect", "--config", &cfg, "--input", &data, "--output", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let segments = fs::read_to_string(out.join("map_segments.csv")).unwrap();
    assert!(segments.lines().nth(1).unwrap().contains("2024-01-01"));
    let evidence: f64 = fs::read_to_string(out.join("evidence.txt")).unwrap().trim().parse().unwrap();
    assert!(evidence.is_finite());
}

#[test]
fn exact_refuses_long_series() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (1..=17).map(|t| format!("{t},{t}.0,1\n")).collect();
    let (cfg, data) = setup(dir.path(), &rows);
    let res = renewcp(&["exact", "--config", &cfg, "--input", &data]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("16"));
}

#[test]
fn exact_compare_agrees_with_filter() {
    let dir = tempfile::tempdir().unwrap();
    let series = "1,0.1,0.3\n2,,0.2\n3,5.2,4.9\n4,5.0,\n5,,\n6,4.7,5.3\n7,-2,-1.5\n8,-2.2,-1.9\n";
    let (cfg, data) = setup(dir.path(), series);
    let res = renewcp(&["exact", "--config", &cfg, "--input", &data, "--compare", "--max-particles", "inf"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    let deviations: Vec<f64> = stdout
        .lines()
        .skip_while(|l| !l.starts_with("# max |filter - exact|"))
        .skip(1)
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(deviations.len(), 4, "{stdout}");
    assert!(deviations.iter().all(|d| *d < 1e-8), "{deviations:?}");
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path(), "");
    let run = |name: &str| {
        let out = dir.path().join(name).join("y.csv");
        let res = renewcp(&["simulate", "--config", &cfg, "--output", path(&out), "--seed", "5"]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        (fs::read(&out).unwrap(), fs::read(out.with_file_name("truth.json")).unwrap())
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let truth: serde_json::Value = serde_json::from_slice(&a.1).unwrap();
    assert_eq!(truth["seed"], 5);
    assert_eq!(truth["changepoints"][0], 1);
    let other = dir.path().join("c.csv");
    renewcp(&["simulate", "--config", &cfg, "--output", path(&other), "--seed", "6"]);
    assert_ne!(fs::read(&other).unwrap(), a.0);
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = setup(dir.path(), "1,0,0\n");
    let out = dir.path().join("out");
    for bad in [
        CONFIG.replace("seed = 11", "seed = 11\nmodel.colour = blue"),
        CONFIG.replace("prior.p = 0.1", "prior.p = 1.5"),
        CONFIG.replace("model.nu = 3\n", ""),
    ] {
        let cfg = dir.path().join("bad.cfg");
        fs::write(&cfg, bad).unwrap();
        let res = renewcp(&["detect", "--config", path(&cfg), "--input", &data, "--output", path(&out)]);
        assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    }
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), "1,0,0\n2,x,1\n");
    let out = dir.path().join("out");
    let res = renewcp(&["detect", "--config", &cfg, "--input", &data, "--output", path(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));
    let missing = dir.path().join("missing.csv");
    let res = renewcp(&["detect", "--config", &cfg, "--input", path(&missing), "--output", path(&out)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn risk_prints_probability() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), "1,0.1,0\n2,0.2,0\n3,-0.1,0\n");
    let res = renewcp(&["risk", "--config", &cfg, "--input", &data]);
    assert!(res.status.success());
    let p: f64 = String::from_utf8(res.stdout).unwrap().trim().parse().unwrap();
    assert!(p > 0.5 && p < 1.0, "{p}");
}

#[test]
fn emitted_files_reparse() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path(), "");
    let data = dir.path().join("sim/y.csv");
    assert!(renewcp(&["simulate", "--config", &cfg, "--output", path(&data)]).status.success());
    let series = SeriesFile::read(&data, 2).unwrap();
    assert_eq!(series.len(), 40);

    let out = dir.path().join("out");
    let res = renewcp(&["detect", "--config", &cfg, "--input", path(&data), "--output", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let mut total = 0.0;
    for row in csv::Reader::from_path(out.join("last_changepoint.csv")).unwrap().records() {
        let row = row.unwrap();
        let j: usize = row[0].parse().unwrap();
        assert!((1..=40).contains(&j));
        total += row[2].parse::<f64>().unwrap();
    }
    assert!((total - 1.0).abs() < 1e-9);

    let marginals: Vec<f64> = csv::Reader::from_path(out.join("marginals.csv"))
        .unwrap()
        .records()
        .map(|r| r.unwrap()[2].parse().unwrap())
        .collect();
    assert_eq!(marginals.len(), 39);
    assert!(marginals.iter().all(|p| (0.0..=1.0).contains(p)));

    let mut next_start = 1;
    for row in csv::Reader::from_path(out.join("map_segments.csv")).unwrap().records() {
        let row = row.unwrap();
        assert_eq!(row.len(), 4 + 2 + 1);
        assert_eq!(row[0].parse::<usize>().unwrap(), next_start);
        next_start = row[1].parse::<usize>().unwrap() + 1;
    }
    assert_eq!(next_start, 41);

    let lines: Vec<serde_json::Value> = fs::read_to_string(out.join("trace.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 40);
    assert!(lines.iter().all(|l| l["particles"].as_array().unwrap().len() <= 64));

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 11);
}
