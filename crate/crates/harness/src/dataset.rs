//! CSV-manifest datasets of 8-bit images.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::{Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use s4st_core::ops::SampleMap;

use crate::error::{invalid, HarnessError, Result};

pub const MANIFEST_HEADER: [&str; 3] = ["image_path", "true_label", "target_label"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    pub true_label: usize,
    pub target_label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub image_size: (usize, usize),
    pub class_count: usize,
    /// Directory that relative image paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn true_labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.true_label).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.target_label).collect()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.image_path)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// `N × 3 × H × W` in `[0, 1]`.
    pub images: Array4<f32>,
}

/// Parses and validates a manifest without decoding images.
pub fn read_manifest(path: &Path, image_size: (usize, usize), class_count: usize) -> Result<DatasetManifest> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != MANIFEST_HEADER {
        return Err(invalid(format!("manifest header must be `{}`, got `{}`", MANIFEST_HEADER.join(","), header.join(","))));
    }
    let mut entries = Vec::new();
    for (i, row) in reader.deserialize::<ManifestEntry>().enumerate() {
        let entry = row.map_err(|e| HarnessError::Load { entry: i, detail: e.to_string() })?;
        if entry.true_label >= class_count || entry.target_label >= class_count {
            return Err(HarnessError::Load { entry: i, detail: format!("label outside 0..{class_count}") });
        }
        if entry.true_label == entry.target_label {
            return Err(HarnessError::Load { entry: i, detail: "target_label equals true_label".into() });
        }
        entries.push(entry);
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(DatasetManifest { entries, image_size, class_count, root })
}

pub fn rgb8_to_array(img: &RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0)
}

/// Round-to-nearest 8-bit quantization of a `[0, 1]` image.
pub fn array_to_rgb8(x: ArrayView3<f32>) -> RgbImage {
    let (_, h, w) = x.dim();
    RgbImage::from_fn(w as u32, h as u32, |px, py| {
        let q = |c: usize| (x[[c, py as usize, px as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([q(0), q(1), q(2)])
    })
}

/// Bilinear (half-pixel centers) resize to `(h, w)`.
pub fn resize_bilinear(x: ArrayView3<f32>, (h, w): (usize, usize)) -> Array3<f32> {
    let (_, sh, sw) = x.dim();
    if (sh, sw) == (h, w) {
        return x.to_owned();
    }
    SampleMap::resize((sh, sw), h, w).apply(x)
}

/// Decodes every entry, resized to `image_size` and scaled to `[0, 1]`.
pub fn load_dataset(path: &Path, image_size: (usize, usize), class_count: usize) -> Result<Dataset> {
    let manifest = read_manifest(path, image_size, class_count)?;
    let (h, w) = image_size;
    let mut images = Array4::zeros((manifest.len(), 3, h, w));
    for (i, entry) in manifest.entries.iter().enumerate() {
        let file = manifest.resolve(entry);
        let decoded = image::open(&file).map_err(|e| HarnessError::Load { entry: i, detail: format!("{}: {e}", file.display()) })?;
        let pixels = rgb8_to_array(&decoded.to_rgb8());
        images.index_axis_mut(Axis(0), i).assign(&resize_bilinear(pixels.view(), image_size));
    }
    Ok(Dataset { manifest, images })
}

/// Writes `images` as PNG files plus a manifest in `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, prefix: &str, images: &Array4<f32>, labels: &[usize], targets: &[usize]) -> Result<PathBuf> {
    if images.len_of(Axis(0)) != labels.len() || labels.len() != targets.len() {
        return Err(invalid("images, labels and targets must have equal length"));
    }
    fs::create_dir_all(dir)?;
    let path = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    for (i, img) in images.axis_iter(Axis(0)).enumerate() {
        let name = format!("{prefix}_{i:04}.png");
        array_to_rgb8(img).save(dir.join(&name))?;
        writer.serialize(ManifestEntry { image_path: name, true_label: labels[i], target_label: targets[i] })?;
    }
    writer.flush()?;
    Ok(path)
}
