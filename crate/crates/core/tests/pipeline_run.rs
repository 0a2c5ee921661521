use std::path::Path;

use gapflow::pipeline::{load_report, run, verify_report, RunConfig, StageStatus, EMPTY_MARKER};
use gapflow::synthgen::{GeneratorKind, GeneratorSpec};

fn small_config(out: &Path, snapshots: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = Some(5);
    cfg.synth = Some(GeneratorSpec::new(GeneratorKind::SyntheticBook, snapshots, 5));
    cfg.out_dir = out.to_path_buf();
    cfg.taus = vec![10, 30];
    cfg.granger.shuffles = 100;
    cfg.granger.tau_tilde = 200;
    cfg.anm.shuffles = 100;
    cfg.anm.tau_tilde = 100;
    cfg.anm.taus = vec![30];
    cfg.anm.lags = vec![0, 1];
    cfg
}

#[test]
fn run_writes_a_verifiable_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&small_config(dir.path(), 20_000)).unwrap();
    for name in ["ingest", "series", "xcorr", "granger", "anm", "surrogate"] {
        assert_eq!(report.stage(name).unwrap().status, StageStatus::Complete, "{name}");
    }
    assert!(!report.granger.is_empty() && !report.anm.is_empty());
    assert!(report.files.iter().any(|f| f.path == "granger/results.csv"));
    assert!(report.files.iter().any(|f| f.path == "figures/max_gap_position_tau30.csv"));
    let loaded = load_report(dir.path()).unwrap();
    assert_eq!(loaded, report);
    assert!(verify_report(dir.path(), &loaded).is_empty());

    std::fs::write(dir.path().join("granger/results.csv"), "tampered").unwrap();
    assert_eq!(verify_report(dir.path(), &loaded), vec!["granger/results.csv".to_string()]);
}

#[test]
fn results_csv_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    run(&small_config(dir.path(), 20_000)).unwrap();
    let granger = std::fs::read_to_string(dir.path().join("granger/results.csv")).unwrap();
    assert!(granger.starts_with("pair,direction,variant,tau,window,s,significant\n"));
    let anm = std::fs::read_to_string(dir.path().join("anm/results.csv")).unwrap();
    assert!(anm.starts_with("pair,lag,window,S,Zxy,Zyx,significant"));
    let xc = std::fs::read_to_string(dir.path().join("xcorr/tau10/r100_g100.csv")).unwrap();
    assert!(xc.starts_with("lag,C,J\n"));
}

#[test]
fn short_input_marks_stages_empty() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 500);
    cfg.xcorr.enabled = false;
    let report = run(&cfg).unwrap();
    assert_eq!(report.stage("xcorr").unwrap().status, StageStatus::Disabled);
    assert_eq!(report.stage("granger").unwrap().status, StageStatus::Empty);
    let marker = std::fs::read_to_string(dir.path().join("granger/empty.txt")).unwrap();
    assert_eq!(marker.trim(), EMPTY_MARKER);
}

#[test]
fn failing_input_leaves_a_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 500);
    cfg.synth = None;
    cfg.inputs = vec![dir.path().join("missing.csv")];
    let err = run(&cfg).unwrap_err();
    assert_eq!(err.kind(), "stage");
    let report = load_report(dir.path()).unwrap();
    assert_eq!(report.stage("ingest").unwrap().status, StageStatus::Failed);
    assert!(report.error.is_some());
}

#[test]
fn config_file_round_trips_through_toml() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1000);
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}
