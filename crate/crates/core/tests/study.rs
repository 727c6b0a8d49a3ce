//! Study harness: reproducibility, aggregation and output files.

use twingee::study::{presets, run_study, write_summary_csv, StudyConfig, StudyOutputs};

fn csv_bytes(cfg: &StudyConfig) -> Vec<u8> {
    let run = run_study(cfg).unwrap();
    let mut out = Vec::new();
    write_summary_csv(&run.summary, &mut out).unwrap();
    out
}

#[test]
fn thread_count_does_not_change_results() {
    let mut cfg = presets::overdispersed_counts(12, 99);
    cfg.parallelism = 1;
    let serial = run_study(&cfg).unwrap();
    cfg.parallelism = 4;
    let parallel = run_study(&cfg).unwrap();
    assert_eq!(serial.summary, parallel.summary);
    assert_eq!(serial.records, parallel.records);
    assert_eq!(csv_bytes(&cfg), csv_bytes(&cfg));
}

#[test]
fn smoke_study_emits_every_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = presets::sex_varying(10, 3);
    cfg.outputs = StudyOutputs {
        summary_md: Some(dir.path().join("s.md")),
        summary_csv: Some(dir.path().join("s.csv")),
        replicates_csv: Some(dir.path().join("r.csv")),
        profile_csv: Some(dir.path().join("nested/p.csv")),
    };
    let run = run_study(&cfg).unwrap();
    twingee::study::write_outputs(&run, &cfg.outputs).unwrap();

    let summary = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let header: Vec<&str> = summary.lines().next().unwrap().split(',').collect();
    for col in [
        "estimator", "level", "mean_h2", "mean_c2", "true_se_h2", "true_se_c2", "mean_se_h2", "mean_se_c2",
        "coverage_h2", "coverage_c2", "sem_h2", "sem_c2", "n_ok", "n_failed",
    ] {
        assert!(header.contains(&col), "missing {col}");
    }
    assert_eq!(summary.lines().count(), 1 + 4);
    let reps = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 10 * 4);
    let md = std::fs::read_to_string(dir.path().join("s.md")).unwrap();
    assert!(md.contains("| GEE2-NACE (sex) | 1 |"));
    let profile = std::fs::read_to_string(dir.path().join("nested/p.csv")).unwrap();
    assert_eq!(profile.lines().count(), 1 + 4);

    for row in &run.summary.rows {
        assert!((0.0..=1.0).contains(&row.coverage_h2));
        assert!(row.true_se_h2.unwrap() >= 0.0);
        let sem = row.true_se_h2.unwrap() / (row.n_ok as f64).sqrt();
        assert!((row.sem_h2.unwrap() - sem).abs() < 1e-15);
    }
}

#[test]
fn coverage_flags_match_intervals() {
    let run = run_study(&presets::heavy_tailed(8, 5)).unwrap();
    for r in run.records.iter().filter(|r| r.ok) {
        let inside = r.h2 - 1.96 * r.se_h2 <= 0.5 && 0.5 <= r.h2 + 1.96 * r.se_h2;
        assert_eq!(r.covers_h2, inside);
        let inside = r.c2 - 1.96 * r.se_c2 <= 0.3 && 0.3 <= r.c2 + 1.96 * r.se_c2;
        assert_eq!(r.covers_c2, inside);
    }
    let row = run.summary.row("NACE", None).unwrap();
    let covered = run.records.iter().filter(|r| r.estimator == "NACE" && r.covers_h2).count();
    assert_eq!(row.coverage_h2, covered as f64 / 8.0);
}

#[test]
fn contrast_study_reports_rejection_rate() {
    let run = run_study(&presets::age_contrast(6, 8)).unwrap();
    let c = run.summary.contrast.as_ref().unwrap();
    assert_eq!(c.n_ok + c.n_failed, 6);
    let rejected = run.contrasts.iter().filter(|r| r.reject).count();
    assert_eq!(c.rejection_rate, rejected as f64 / c.n_ok as f64);
    assert_eq!((c.a, c.b), (29.0, 17.0));
}

#[test]
fn json_config_drives_a_study() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("study.json");
    std::fs::write(
        &path,
        r#"{
            "scenario": {"scenario": "unequal_var_normal", "n_mz": 300, "n_dz": 300,
                "alpha_mz": {"sigma2_a": 0.3, "sigma2_c": 0.18, "sigma2_e": 0.12},
                "alpha_dz": {"sigma2_a": 0.5, "sigma2_c": 0.3, "sigma2_e": 0.2},
                "require_equal_proportions": true, "seed": 17},
            "estimators": [{"estimator": "NACE"}, {"estimator": "Falconer"}],
            "replicates": 3,
            "parallelism": 2
        }"#,
    )
    .unwrap();
    let cfg = StudyConfig::from_json_file(&path).unwrap();
    let run = run_study(&cfg).unwrap();
    assert_eq!(run.summary.rows.len(), 2);
    assert_eq!(run.summary.rows[0].truth_h2, 0.5);
}
