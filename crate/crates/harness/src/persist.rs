//! Adversarial examples on disk: 8-bit PNGs, a CSV manifest in the dataset
//! format and a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset};
use crate::error::{invalid, Result};

pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialMeta {
    pub epsilon: f64,
    /// Largest per-image ℓ∞ distance after quantization.
    pub max_linf: f64,
    pub attack: serde_json::Value,
    pub grad_norm_trace: Vec<f64>,
    pub loss_trace: Vec<f64>,
}

/// Per-image ℓ∞ distance between two batches.
pub fn linf_per_image(a: &Array4<f32>, b: &Array4<f32>) -> Vec<f64> {
    a.axis_iter(Axis(0))
        .zip(b.axis_iter(Axis(0)))
        .map(|(x, y)| {
            let mut m = 0.0f32;
            Zip::from(&x).and(&y).for_each(|p, q| m = m.max((p - q).abs()));
            m as f64
        })
        .collect()
}

/// Writes `x_adv` into `dir` with the labels of `clean`; returns the path of
/// the adversarial manifest.
pub fn save_adversarial(dir: &Path, x_adv: &Array4<f32>, clean: &Dataset, mut meta: AdversarialMeta) -> Result<PathBuf> {
    if x_adv.dim() != clean.images.dim() {
        return Err(invalid("adversarial batch and dataset differ in shape"));
    }
    let path = dataset::write_dataset(dir, "adv", x_adv, &clean.manifest.true_labels(), &clean.manifest.targets())?;
    let reloaded = load_adversarial(&path, clean)?;
    meta.max_linf = linf_per_image(&reloaded.images, &clean.images).into_iter().fold(0.0, f64::max);
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
    Ok(path)
}

/// Loads a saved adversarial manifest, sized like `clean`.
pub fn load_adversarial(manifest: &Path, clean: &Dataset) -> Result<Dataset> {
    let ds = dataset::load_dataset(manifest, clean.manifest.image_size, clean.manifest.class_count)?;
    if ds.manifest.len() != clean.manifest.len() {
        return Err(invalid("adversarial manifest and dataset differ in length"));
    }
    Ok(ds)
}

pub fn load_meta(dir: &Path) -> Result<AdversarialMeta> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?)
}
