//! Blind hyperparameter search for S4ST on the surrogate alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use s4st_core::analysis::{bayes_tune, SearchSpace, TuneOutcome, TuningContext};
use s4st_core::transform_kit::intensity_grid;
use s4st_core::{AttackConfig, S4STParams};

use crate::desk;
use crate::error::{invalid, Result};
use crate::experiment::RigSource;
use crate::rig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub name: String,
    pub rig: RigSource,
    /// Images drawn from the rig's tuning corpus (disjoint from evaluation).
    pub images: usize,
    /// Attack run for every candidate.
    pub attack: AttackConfig,
    /// Intensity samples per kind in the objective.
    pub grid_points: usize,
    pub space: SearchSpace,
    pub trials: usize,
    pub init_random: usize,
    pub seed: u64,
    /// Candidates scored alongside the search for reference.
    pub reference: Vec<S4STParams>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            name: "tune".into(),
            rig: RigSource::default(),
            images: 50,
            attack: desk::attack_config(),
            grid_points: 10,
            space: SearchSpace::default(),
            trials: 30,
            init_random: 10,
            seed: 0,
            reference: vec![S4STParams::default()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScore {
    pub params: S4STParams,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSummary {
    pub best: S4STParams,
    pub best_value: f64,
    pub references: Vec<ReferenceScore>,
}

/// Runs the search; writes `trials.jsonl` and `best.json` under
/// `<root>/<name>/`.
pub fn run_tune(cfg: &TuneConfig, root: &Path) -> Result<(PathBuf, TuneOutcome, TuneSummary)> {
    if cfg.images == 0 {
        return Err(invalid("tuning needs at least one image"));
    }
    let dir = root.join(&cfg.name);
    fs::create_dir_all(&dir)?;
    let rig_dir = cfg.rig.dir.clone().unwrap_or_else(|| root.join("rig"));
    let rig = rig::load_or_build(&cfg.rig.spec, &rig_dir)?;
    let (x, _, targets) = rig.manifest.spec.tuning_corpus(cfg.images);
    let grid = intensity_grid(cfg.grid_points)?;
    let ctx = TuningContext::new(rig.surrogate().1, x, targets, cfg.attack.clone(), &grid)?;
    let outcome = bayes_tune(&mut |p| ctx.evaluate(p), &cfg.space, cfg.trials, cfg.init_random, cfg.seed)?;
    let references =
        cfg.reference.iter().map(|p| Ok(ReferenceScore { params: *p, value: ctx.evaluate(p)? })).collect::<Result<Vec<_>>>()?;
    let summary = TuneSummary { best: outcome.best, best_value: outcome.best_value, references };
    fs::write(dir.join("trials.jsonl"), outcome.log_jsonl()?)?;
    fs::write(dir.join("best.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok((dir, outcome, summary))
}
