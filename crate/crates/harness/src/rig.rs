//! Desk-scale model zoo: one surrogate and several victims trained on the
//! synthetic shapes task, persisted with a content hash.
//!
//! Layout of a rig directory:
//!
//! ```text
//! rig.json              RigManifest (spec, zoo entries, curves, hash)
//! weights/<id>.json     NetworkRecord per model
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use s4st_core::nn::NetworkRecord;
use s4st_core::{Classifier, Network, RngState};

use crate::error::{invalid, HarnessError, Result};
use crate::synthetic;
use crate::zoo::{self, ModelZooEntry, Preprocessing, Role, TrainConfig, TrainingCurve};

pub const ACCURACY_FLOOR: f64 = 0.8;
pub const MANIFEST_FILE: &str = "rig.json";

// Stream tags for the independent corpora drawn from the rig seed.
const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const TUNE_STREAM: u64 = 4;
const INIT_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub seed: u64,
    pub class_count: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub image_size: usize,
    /// First entry becomes the surrogate, the rest are victims.
    pub architectures: Vec<String>,
    pub train: TrainConfig,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            class_count: 10,
            train_size: 5000,
            test_size: 1000,
            image_size: 32,
            architectures: zoo::ARCHITECTURES.iter().map(|s| s.to_string()).collect(),
            train: TrainConfig { epochs: 12, ..TrainConfig::default() },
        }
    }
}

impl RigSpec {
    pub fn validate(&self) -> Result<()> {
        if self.architectures.len() < 3 {
            return Err(invalid(format!(
                "a rig needs one surrogate and at least two victims, got {} architecture(s)",
                self.architectures.len()
            )));
        }
        let mut seen = self.architectures.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.architectures.len() {
            return Err(invalid("rig architectures must be distinct"));
        }
        if !(2..=synthetic::TEXTURE_CLASSES.len()).contains(&self.class_count) {
            return Err(invalid(format!("class_count must be in 2..={}", synthetic::TEXTURE_CLASSES.len())));
        }
        if self.train_size == 0 || self.test_size == 0 || self.image_size < 8 {
            return Err(invalid("rig needs non-empty splits and images of at least 8 pixels"));
        }
        Ok(())
    }

    /// Held-out images for attacks, disjoint from training and test draws.
    pub fn eval_corpus(&self, count: usize) -> (Array4<f32>, Vec<usize>, Vec<usize>) {
        let stream = RngState::new(self.seed).derive(EVAL_STREAM);
        self.labelled_corpus(count, stream)
    }

    /// A second held-out draw reserved for hyperparameter tuning.
    pub fn tuning_corpus(&self, count: usize) -> (Array4<f32>, Vec<usize>, Vec<usize>) {
        let stream = RngState::new(self.seed).derive(TUNE_STREAM);
        self.labelled_corpus(count, stream)
    }

    fn labelled_corpus(&self, count: usize, stream: RngState) -> (Array4<f32>, Vec<usize>, Vec<usize>) {
        let (x, y) = synthetic::corpus(count, self.class_count, self.image_size, &stream.derive(0));
        let t = synthetic::random_targets(&y, self.class_count, &stream.derive(1));
        (x, y, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigManifest {
    pub spec: RigSpec,
    pub models: Vec<ModelZooEntry>,
    pub curves: Vec<TrainingCurve>,
    /// SHA-256 over the spec, the zoo entries and every weights file.
    pub hash: String,
}

#[derive(Debug, Clone)]
pub struct Rig {
    pub dir: PathBuf,
    pub manifest: RigManifest,
    pub networks: Vec<Network<f32>>,
}

impl Rig {
    pub fn surrogate(&self) -> (&ModelZooEntry, &Network<f32>) {
        (&self.manifest.models[0], &self.networks[0])
    }

    pub fn victims(&self) -> Vec<(&ModelZooEntry, &Network<f32>)> {
        self.manifest.models.iter().zip(&self.networks).filter(|(e, _)| e.role == Role::Victim).collect()
    }

    /// The victim reported by single-victim criteria: the last one listed.
    pub fn held_out_victim(&self) -> (&ModelZooEntry, &Network<f32>) {
        *self.victims().last().expect("a validated rig has victims")
    }

    pub fn model(&self, model_id: &str) -> Result<(&ModelZooEntry, &Network<f32>)> {
        self.manifest
            .models
            .iter()
            .zip(&self.networks)
            .find(|(e, _)| e.model_id == model_id)
            .ok_or_else(|| invalid(format!("model `{model_id}` is not in the rig")))
    }

    pub fn victim_handles(&self) -> Vec<crate::eval::Victim<'_>> {
        self.victims()
            .into_iter()
            .map(|(e, n)| crate::eval::Victim { model_id: e.model_id.clone(), preprocessing: e.preprocessing.clone(), model: n as &dyn Classifier<f32> })
            .collect()
    }
}

fn hash_rig(spec: &RigSpec, models: &[ModelZooEntry], weights: &[Vec<u8>]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec)?);
    h.update(serde_json::to_vec(models)?);
    for w in weights {
        h.update((w.len() as u64).to_le_bytes());
        h.update(w);
    }
    Ok(hex::encode(h.finalize()))
}

/// Trains and persists a rig into `dir`.
pub fn build_desk_rig(spec: &RigSpec, dir: &Path) -> Result<Rig> {
    spec.validate()?;
    let root = RngState::new(spec.seed);
    let (x, y) = synthetic::corpus(spec.train_size, spec.class_count, spec.image_size, &root.derive(TRAIN_STREAM));
    let (tx, ty) = synthetic::corpus(spec.test_size, spec.class_count, spec.image_size, &root.derive(TEST_STREAM));

    let mut networks = Vec::new();
    let mut models = Vec::new();
    let mut curves = Vec::new();
    for (i, arch) in spec.architectures.iter().enumerate() {
        let mut rng = root.derive_all(&[INIT_STREAM, i as u64]).generator();
        let mut net = zoo::build_architecture(arch, spec.class_count, &mut rng)?;
        let curve = zoo::train(&mut net, arch, (&x, &y), (&tx, &ty), &spec.train, &mut rng)?;
        let acc = zoo::accuracy(&net, &tx, &ty)?;
        curves.push(curve);
        models.push(ModelZooEntry {
            model_id: arch.clone(),
            arch: arch.clone(),
            role: if i == 0 { Role::Surrogate } else { Role::Victim },
            weights: format!("weights/{arch}.json"),
            preprocessing: Preprocessing {
                image_size: (spec.image_size, spec.image_size),
                mean: zoo::NORM_MEAN,
                std: zoo::NORM_STD,
            },
            test_accuracy: acc,
        });
        networks.push(net);
    }
    let failing: Vec<String> = models
        .iter()
        .filter(|m| m.test_accuracy < ACCURACY_FLOOR)
        .map(|m| format!("{} at {:.3}", m.model_id, m.test_accuracy))
        .collect();
    if !failing.is_empty() {
        return Err(HarnessError::RigBuild {
            detail: format!("accuracy below {ACCURACY_FLOOR}: {}", failing.join(", ")),
            curves,
        });
    }

    fs::create_dir_all(dir.join("weights"))?;
    let mut weights = Vec::new();
    for (entry, net) in models.iter().zip(&networks) {
        let bytes = serde_json::to_vec(&net.to_record())?;
        fs::write(dir.join(&entry.weights), &bytes)?;
        weights.push(bytes);
    }
    let hash = hash_rig(spec, &models, &weights)?;
    let manifest = RigManifest { spec: spec.clone(), models, curves, hash };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(Rig { dir: dir.to_path_buf(), manifest, networks })
}

/// Loads a persisted rig and checks its hash.
pub fn load_rig(dir: &Path) -> Result<Rig> {
    let manifest: RigManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut weights = Vec::new();
    let mut networks = Vec::new();
    for entry in &manifest.models {
        let bytes = fs::read(dir.join(&entry.weights))?;
        let record: NetworkRecord = serde_json::from_slice(&bytes)?;
        networks.push(Network::from_record(&record)?);
        weights.push(bytes);
    }
    let hash = hash_rig(&manifest.spec, &manifest.models, &weights)?;
    if hash != manifest.hash {
        return Err(invalid(format!("rig at {} fails its hash check", dir.display())));
    }
    Ok(Rig { dir: dir.to_path_buf(), manifest, networks })
}

/// Reuses the rig in `dir` when it was built from `spec`, otherwise builds it.
pub fn load_or_build(spec: &RigSpec, dir: &Path) -> Result<Rig> {
    if dir.join(MANIFEST_FILE).exists() {
        if let Ok(rig) = load_rig(dir) {
            if &rig.manifest.spec == spec {
                return Ok(rig);
            }
        }
    }
    build_desk_rig(spec, dir)
}
