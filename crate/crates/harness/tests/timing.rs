mod common;

use s4st_core::AttackConfig;
use s4st_harness::desk;
use s4st_harness::experiment::{self, ExperimentConfig, Workspace};
use s4st_harness::timing::timing_probe;

#[test]
fn timing_probes_agree() {
    let rig = common::desk_rig();
    let cfg = ExperimentConfig { images: Some(4), ..ExperimentConfig::default() };
    let clean = experiment::resolve_dataset(&cfg, &rig.manifest.spec, tempfile::tempdir().unwrap().path()).unwrap();
    let ws = Workspace::new(&rig, &cfg, clean).unwrap();
    let attack = AttackConfig { iterations: 20, transform_id: "identity".into(), ..desk::attack_config() };
    let mut run = || ws.attack(&attack, "identity", 0).map(|_| ());
    let a = timing_probe(&mut run, 4, 5).unwrap();
    let b = timing_probe(&mut run, 4, 5).unwrap();
    let ratio = a.median / b.median;
    assert!((0.8..=1.25).contains(&ratio), "medians {} and {}", a.median, b.median);
}
