use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use voltarget::uncertainty::ewma_distribution;

fn voltarget(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voltarget"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = voltarget(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn index_metric(dir: &Path, key: &str) -> f64 {
    json(&dir.join("metrics.json"))["index"][key].as_f64().unwrap()
}

#[test]
fn open_loop_synthetic_hits_target_vol() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_ok(&[
        "backtest",
        "--mode",
        "open-loop",
        "--synth",
        "iid:vol=0.30,len=5000,seed=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let vol = index_metric(&out, "ann_vol");
    assert!((vol / 0.15 - 1.0).abs() < 0.02, "ann_vol {vol}");
    for name in ["trajectory.csv", "metrics.json", "manifest.json"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
}

#[test]
fn control_tracks_better_on_regime_switch() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = "regime:vols=0.10;0.30,switch=2500,len=5000,seed=1";
    let mut mae = Vec::new();
    for mode in ["open-loop", "control"] {
        let out = tmp.path().join(mode);
        run_ok(&["backtest", "--mode", mode, "--synth", synth, "--out", out.to_str().unwrap()]);
        mae.push(index_metric(&out, "tracking_error_mae"));
    }
    assert!(mae[1] < mae[0], "control {} vs open {}", mae[1], mae[0]);
}

#[test]
fn missing_csv_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let result = voltarget(&[
        "backtest",
        "--mode",
        "open-loop",
        "--risky",
        tmp.path().join("absent.csv").to_str().unwrap(),
        "--rate",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!result.status.success());
    assert!(!result.stderr.is_empty());
    assert!(!out.exists());
}

#[test]
fn csv_inputs_are_read_and_left_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let risky = tmp.path().join("spx.csv");
    let mut text = String::from("date,close\n");
    let mut price = 100.0f64;
    for day in 0..300 {
        let date = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(day);
        price *= 1.0 + 0.01 * ((day as f64) * 0.7).sin();
        text.push_str(&format!("{date},{price}\n"));
    }
    std::fs::write(&risky, &text).unwrap();
    let out = tmp.path().join("run");
    run_ok(&[
        "backtest",
        "--mode",
        "control",
        "--risky",
        risky.to_str().unwrap(),
        "--rate",
        "1.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read_to_string(&risky).unwrap(), text);
    assert_eq!(csv_rows(&out.join("trajectory.csv")).len(), 299);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn default_bands_bracket_target() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bands");
    run_ok(&["bands", "--out", out.to_str().unwrap()]);
    let rows = csv_rows(&out.join("band.csv"));
    assert_eq!(rows.len(), 2);
    let target = 0.15 / 252f64.sqrt();
    let lo: f64 = rows[0][1].parse().unwrap();
    let hi: f64 = rows[1][1].parse().unwrap();
    assert!(lo < target && target < hi);
    assert!(out.join("chi_approx.json").is_file());
}

#[test]
fn large_sample_median_matches_chi() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bands");
    run_ok(&[
        "bands",
        "--percentiles",
        "50",
        "--n-samples",
        "1000000",
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows = csv_rows(&out.join("band.csv"));
    assert_eq!(rows.len(), 1);
    let level: f64 = rows[0][1].parse().unwrap();
    let chi = ewma_distribution(0.15 / 252f64.sqrt(), 126.0).unwrap().median();
    assert!((level / chi - 1.0).abs() < 0.01, "{level} vs {chi}");
}

#[test]
fn bands_reject_short_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bands");
    let result = voltarget(&["bands", "--n-samples", "252", "--out", out.to_str().unwrap()]);
    assert!(!result.status.success());
    assert!(!out.exists());
}

#[test]
fn one_cell_grid_matches_backtest() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = "regime:vols=0.10;0.30,switch=500,len=1000,seed=3";
    let bt = tmp.path().join("bt");
    let grid = tmp.path().join("grid");
    run_ok(&["backtest", "--mode", "control", "--synth", synth, "--out", bt.to_str().unwrap()]);
    run_ok(&[
        "grid",
        "--synth",
        synth,
        "--gains",
        "55",
        "--thetas",
        "0.6",
        "--out",
        grid.to_str().unwrap(),
    ]);
    let rows = csv_rows(&grid.join("grid.csv"));
    let value = |metric: &str| -> f64 { rows.iter().find(|r| r[2] == metric).unwrap()[3].parse().unwrap() };
    assert_eq!(value("tracking_error"), index_metric(&bt, "tracking_error_mae"));
    assert_eq!(value("turnover"), index_metric(&bt, "turnover"));
}

#[test]
fn default_grid_has_120_rows_per_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("grid");
    run_ok(&[
        "grid",
        "--synth",
        "regime:vols=0.10;0.30,switch=2500,len=5000,seed=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows = csv_rows(&out.join("grid.csv"));
    for metric in ["tracking_error", "delta_kalmar", "turnover"] {
        assert_eq!(rows.iter().filter(|r| r[2] == metric).count(), 120);
    }
}

#[test]
fn empty_gain_list_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("grid");
    let result = voltarget(&[
        "grid",
        "--synth",
        "iid:vol=0.2,len=300",
        "--gains",
        "",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!result.status.success());
    assert!(!out.exists());
}

#[test]
fn replay_detects_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let risky = tmp.path().join("r.csv");
    std::fs::write(&risky, "date,close\n2020-01-01,100\n2020-01-02,101\n2020-01-03,100.5\n2020-01-06,102\n").unwrap();
    let first = tmp.path().join("a");
    run_ok(&[
        "backtest",
        "--mode",
        "open-loop",
        "--risky",
        risky.to_str().unwrap(),
        "--rate",
        "0",
        "--warmup",
        "1",
        "--out",
        first.to_str().unwrap(),
    ]);
    std::fs::write(&risky, "date,close\n2020-01-01,100\n2020-01-02,99\n2020-01-03,100.5\n2020-01-06,102\n").unwrap();
    let manifest = first.join("manifest.json");
    let second = tmp.path().join("b");
    let result = voltarget(&["replay", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(!result.status.success());
}
