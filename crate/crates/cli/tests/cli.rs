use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn twingee(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twingee")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = dir.join(name);
    let out = out.to_str().unwrap();
    let mut args = vec!["simulate", "--out", out];
    args.extend_from_slice(extra);
    let o = twingee(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out.to_string()
}

/// Point estimate columns (h2, c2, e2) of one estimator row.
fn points(text: &str, estimator: &str) -> [String; 3] {
    let line = text
        .lines()
        .find(|l| l.split_whitespace().next() == Some(estimator))
        .unwrap_or_else(|| panic!("no row for {estimator} in\n{text}"));
    let cols: Vec<&str> = line.split_whitespace().collect();
    // name h2 se [lo, hi] c2 se [lo, hi] e2 se
    [cols[1].into(), cols[5].into(), cols[9].into()]
}

#[test]
fn missing_input_names_the_path() {
    let o = twingee(&["fit", "/definitely/not/here.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/definitely/not/here.csv"), "{}", stderr(&o));
}

#[test]
fn fit_all_prints_four_estimators() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "t.csv", &["--scenario", "mvt", "--seed", "11"]);
    let o = twingee(&["fit", &csv, "--estimator", "all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for e in ["NACE", "GEE2-NACE", "Falconer", "GEE2-Falconer"] {
        points(&text, e);
    }
    assert_eq!(points(&text, "NACE"), points(&text, "GEE2-NACE"));
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    for scenario in ["mvt", "blgp", "unequal-var", "sex", "age"] {
        let args = ["--scenario", scenario, "--seed", "42", "--n-mz", "50", "--n-dz", "60"];
        let a = simulate(dir.path(), "a.csv", &args);
        let first = std::fs::read(&a).unwrap();
        let b = simulate(dir.path(), "b.csv", &args);
        assert_eq!(first, std::fs::read(&b).unwrap(), "{scenario}");
    }
}

#[test]
fn rejects_negative_dispersion() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    let o = twingee(&[
        "simulate",
        "--scenario",
        "blgp",
        "--seed",
        "1",
        "--lambda",
        "-0.2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("-0.2"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn json_fit_recovers_truth() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "t.csv", &["--scenario", "mvt", "--seed", "5"]);
    let json = dir.path().join("fit.json");
    let o = twingee(&["fit", &csv, "--estimator", "gee2-falconer", "--json", json.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["estimator"], "GEE2-Falconer");
    let h2 = v["proportions"]["h2"].as_f64().unwrap();
    let se = v["se_h2"].as_f64().unwrap();
    assert!(se > 0.0);
    assert!((h2 - 0.5).abs() < 3.0 * se, "h2 {h2} se {se}");
    let sum: f64 = ["h2", "c2", "e2"].iter().map(|k| v["proportions"][k].as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn sex_covariate_fit_and_contrast() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "s.csv", &["--scenario", "sex", "--seed", "8"]);
    let profile = dir.path().join("profile.csv");
    let o = twingee(&[
        "fit",
        &csv,
        "--estimator",
        "gee2-nace",
        "--var-covariate",
        "sex",
        "--contrast",
        "1,0",
        "--profile-csv",
        profile.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("h2(1) - h2(0)"), "{}", stdout(&o));
    let rows = std::fs::read_to_string(&profile).unwrap();
    assert_eq!(rows.lines().count(), 3, "{rows}");
}

#[test]
fn classical_estimator_with_covariate_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "s.csv", &["--scenario", "sex", "--seed", "8"]);
    let o = twingee(&["fit", &csv, "--estimator", "nace", "--var-covariate", "sex"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
}

#[test]
fn study_writes_output_directory() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("study");
    std::fs::create_dir(&out).unwrap();
    let o = twingee(&[
        "study",
        "--preset",
        "sex",
        "--replicates",
        "6",
        "--seed",
        "3",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("GEE2-NACE (sex)"), "{}", stdout(&o));
    for f in ["summary.md", "summary.csv", "replicates.csv", "profile.csv"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(text.lines().count() > 1, "{f} is empty");
    }
}

#[test]
fn study_requires_a_source() {
    let o = twingee(&["study"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn list_flags_check_their_length() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "t.csv", &["--scenario", "mvt", "--seed", "2", "--ace", "0.4,0.4,0.2"]);
    let o = twingee(&["fit", &csv, "--trait-cols", "y1,y2,y3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--trait-cols"), "{}", stderr(&o));
    let o = twingee(&["simulate", "--scenario", "mvt", "--seed", "1", "--ace", "1,2", "--out", "unused.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--ace"), "{}", stderr(&o));
}
