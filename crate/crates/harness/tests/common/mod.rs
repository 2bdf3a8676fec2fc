#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Mutex;

use s4st_harness::rig::{self, Rig, RigSpec};

static BUILD: Mutex<()> = Mutex::new(());

/// Shared desk rig, trained on first use and cached under the target
/// directory (or `S4ST_RIG_DIR`).
pub fn rig_dir() -> PathBuf {
    std::env::var_os("S4ST_RIG_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("desk-rig"))
}

pub fn desk_rig() -> Rig {
    let _guard = BUILD.lock().unwrap_or_else(|e| e.into_inner());
    rig::load_or_build(&RigSpec::default(), &rig_dir()).expect("desk rig")
}
