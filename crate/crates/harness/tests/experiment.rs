mod common;

use std::fs;

use s4st_core::AttackConfig;
use s4st_harness::desk;
use s4st_harness::experiment::{self, declared_files, ExperimentConfig, RigSource, FAILURE_MARKER};

fn minimal(name: &str) -> ExperimentConfig {
    common::desk_rig();
    ExperimentConfig {
        name: name.into(),
        rig: RigSource { dir: Some(common::rig_dir()), ..RigSource::default() },
        images: Some(4),
        attack: AttackConfig { iterations: 10, transform_id: "identity".into(), ..desk::attack_config() },
        curve_every: 5,
        ..ExperimentConfig::default()
    }
}

#[test]
fn minimal_run_writes_declared_files_and_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let cfg = minimal("smoke");
    let dir = experiment::run_experiment_in(&cfg, root.path()).unwrap();
    for f in declared_files(&cfg) {
        assert!(dir.join(&f).is_file(), "missing {}", f.display());
    }
    assert!(!dir.join(FAILURE_MARKER).exists());
    let report = "runs/seed-0/eval_report.json";
    let first = fs::read_to_string(dir.join(report)).unwrap();

    let other = tempfile::tempdir().unwrap();
    let again = experiment::run_experiment_in(&cfg, other.path()).unwrap();
    assert_eq!(first, fs::read_to_string(again.join(report)).unwrap());

    let reloaded = experiment::reevaluate(&dir, 0).unwrap();
    assert_eq!(serde_json::to_string_pretty(&reloaded).unwrap() + "\n", first);
}

#[test]
fn config_file_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let path = root.path().join("exp.json");
    fs::write(&path, serde_json::to_string(&minimal("from-file")).unwrap()).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg, minimal("from-file"));
}

#[test]
fn ablation_produces_four_rows() {
    let root = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { ablation: true, curve_every: 0, ..minimal("ablation") };
    let dir = experiment::run_experiment_in(&cfg, root.path()).unwrap();
    let rows: Vec<experiment::AblationRow> = serde_json::from_str(&fs::read_to_string(dir.join("ablation.json")).unwrap()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.row.as_str()).collect();
    assert_eq!(names, ["Base", "Base+Aug", "Base+Block", "S4ST"]);
    let md = fs::read_to_string(dir.join("ablation.md")).unwrap();
    assert_eq!(md.lines().count(), 6);
    assert!(rows.iter().all(|r| (0.0..=100.0).contains(&r.avg_tsuc)));
}

#[test]
fn failing_stage_leaves_a_marker() {
    let root = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { victims: vec!["no-such-model".into()], ..minimal("broken") };
    assert!(experiment::run_experiment_in(&cfg, root.path()).is_err());
    let marker = fs::read_to_string(root.path().join("broken").join(FAILURE_MARKER)).unwrap();
    assert!(marker.starts_with("stage: models"), "{marker}");
    assert!(root.path().join("broken/config.json").is_file());
    assert!(root.path().join("broken/dataset/manifest.csv").is_file());
}
