//! Blind and black-box measurements of adversarial examples.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Array4, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::attack::AttackResult;
use crate::error::{invalid, Result};
use crate::nn::{Classifier, Network};
use crate::ops::{affine_map, flip_map, perspective_map, SampleMap};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::transform::InputTransform;
use crate::transform_kit::{
    apply_differentiable, perspective_corners, FlipAxis, IntensityGrid, TransformKind, TransformVariant,
    TwoAxisLattice, VariantParams, MAX_SHEAR_DEGREES,
};

/// Seed of the lattice used when callers do not supply one.
pub const DEFAULT_LATTICE_SEED: u64 = 0;

/// Default Grad-CAM binarization threshold.
pub const CAM_THRESHOLD: f64 = 0.5;

const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputTag {
    Clean,
    Adversarial,
    TransformedAdversarial,
}

/// Penultimate-layer features of a batch, one row per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationSet {
    pub vectors: Array2<f64>,
    pub source_model: String,
    pub input_tag: InputTag,
}

impl RepresentationSet {
    pub fn new(vectors: Array2<f64>, source_model: impl Into<String>, input_tag: InputTag) -> Result<Self> {
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(invalid("representation contains non-finite values"));
        }
        Ok(Self { vectors, source_model: source_model.into(), input_tag })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric_name: String,
    pub value: f64,
    pub breakdown: Vec<f64>,
    pub provenance: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(metric_name: impl Into<String>, breakdown: Vec<f64>) -> Result<Self> {
        if breakdown.is_empty() {
            return Err(invalid("metric over zero items"));
        }
        let value = breakdown.iter().sum::<f64>() / breakdown.len() as f64;
        if !value.is_finite() {
            return Err(invalid("metric value is not finite"));
        }
        Ok(Self { metric_name: metric_name.into(), value, breakdown, provenance: BTreeMap::new() })
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.provenance.insert(key.into(), value.to_string());
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn chunked<T: Scalar, U>(x: &Array4<T>, mut f: impl FnMut(&Array4<T>) -> Result<Array2<U>>) -> Result<Array2<U>>
where
    U: Clone + num_traits::Zero,
{
    let n = x.dim().0;
    let mut parts = Vec::new();
    for lo in (0..n).step_by(CHUNK) {
        let hi = (lo + CHUNK).min(n);
        parts.push(f(&x.slice(s![lo..hi, .., .., ..]).to_owned())?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| invalid(e.to_string()))
}

pub fn extract_representations<T: Scalar>(model: &Network<T>, model_id: &str, images: &Array4<T>, tag: InputTag) -> Result<RepresentationSet> {
    model.head_index()?;
    let feats = chunked(images, |b| model.features(b))?;
    RepresentationSet::new(feats.mapv(|v| v.f64()), model_id, tag)
}

/// Indices of the `k` nearest rows to each row under cosine distance,
/// excluding the row itself; ties go to the lower index.
pub fn knn_indices(vectors: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let b = vectors.nrows();
    if b < 2 {
        return Err(invalid("need at least two representations"));
    }
    if k == 0 || k >= b {
        return Err(invalid(format!("k = {k} must satisfy 1 <= k < b = {b}")));
    }
    let unit: Array2<f64> = {
        let mut u = vectors.to_owned();
        for mut row in u.axis_iter_mut(Axis(0)) {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
        u
    };
    let sim = unit.dot(&unit.t());
    Ok((0..b)
        .map(|i| {
            let mut others: Vec<usize> = (0..b).filter(|&j| j != i).collect();
            others.sort_by(|&a, &c| (1.0 - sim[[i, a]]).total_cmp(&(1.0 - sim[[i, c]])).then(a.cmp(&c)));
            others.truncate(k);
            others
        })
        .collect())
}

/// Per-item neighbor overlap `|N_A(i) ∩ N_B(i)| / k`.
pub fn knn_overlap_per_item(a: &RepresentationSet, b: &RepresentationSet, k: usize) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(invalid(format!("representation sets differ in size: {} vs {}", a.len(), b.len())));
    }
    let na = knn_indices(a.vectors.view(), k)?;
    let nb = knn_indices(b.vectors.view(), k)?;
    Ok(na
        .iter()
        .zip(&nb)
        .map(|(x, y)| x.iter().filter(|i| y.contains(i)).count() as f64 / k as f64)
        .collect())
}

pub fn knn_overlap_alignment(a: &RepresentationSet, b: &RepresentationSet, k: usize) -> Result<f64> {
    let per = knn_overlap_per_item(a, b, k)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Neighbor count used for a batch of `b` items.
pub fn default_k(b: usize) -> usize {
    (b / 10).max(1)
}

/// Average of per-pair alignments.
pub fn mean_alignment(pairs: &[(&RepresentationSet, &RepresentationSet)], k: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(invalid("no representation pairs"));
    }
    let mut total = 0.0;
    for (a, b) in pairs {
        total += knn_overlap_alignment(a, b, k)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Every variant of `kind` over `grid`; two-axis kinds read the lattice.
pub fn grid_variants(kind: TransformKind, grid: &IntensityGrid, lattice: TwoAxisLattice) -> Result<Vec<TransformVariant>> {
    crate::transform_kit::variants_over_grid(kind, grid, lattice)
}

fn apply_batch<T: Scalar>(variant: &TransformVariant, x: &Array4<T>) -> Result<Array4<T>> {
    let outs = x
        .axis_iter(Axis(0))
        .map(|img| apply_differentiable(variant, img).map(|t| t.output.mapv(|v| v.max(T::zero()).min(T::one()))))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = outs.iter().map(|o| o.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| invalid(e.to_string()))
}

fn target_probs<T: Scalar>(model: &dyn Classifier<T>, x: &Array4<T>, targets: &[usize]) -> Result<Vec<f64>> {
    let p = chunked(x, |b| model.probabilities(b))?;
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if t >= p.ncols() {
                Err(invalid(format!("target {t} out of range")))
            } else {
                Ok(p[[i, t]].f64())
            }
        })
        .collect()
}

/// Target-class probability of `model` on every (variant, image) pair,
/// variant-major.
pub fn variant_target_probs<T: Scalar>(
    model: &dyn Classifier<T>,
    variants: &[TransformVariant],
    x: &Array4<T>,
    targets: &[usize],
) -> Result<Vec<f64>> {
    if targets.len() != x.dim().0 {
        return Err(invalid(format!("{} targets for {} images", targets.len(), x.dim().0)));
    }
    let mut out = Vec::with_capacity(variants.len() * targets.len());
    for v in variants {
        out.extend(target_probs(model, &apply_batch(v, x)?, targets)?);
    }
    Ok(out)
}

fn gap_report(name: &str, adv: &[f64], clean: &[f64], n: usize) -> Result<MetricReport> {
    if adv.len() != clean.len() || n == 0 || adv.len() % n != 0 {
        return Err(invalid("probability tables do not align"));
    }
    let reps = adv.len() / n;
    let per_sample = (0..n)
        .map(|i| (0..reps).map(|r| adv[r * n + i] - clean[r * n + i]).sum::<f64>() / reps as f64)
        .collect();
    MetricReport::new(name, per_sample)
}

/// Mean gain in target probability under every variant of `kind` over
/// `grid`. The breakdown holds one value per sample.
pub fn self_transferability_with<T: Scalar>(
    model: &dyn Classifier<T>,
    kind: TransformKind,
    x_adv: &Array4<T>,
    x: &Array4<T>,
    targets: &[usize],
    grid: &IntensityGrid,
    lattice: TwoAxisLattice,
) -> Result<MetricReport> {
    if x_adv.dim() != x.dim() {
        return Err(invalid(format!("shape mismatch: {:?} vs {:?}", x_adv.dim(), x.dim())));
    }
    let variants = grid_variants(kind, grid, lattice)?;
    let adv = variant_target_probs(model, &variants, x_adv, targets)?;
    let clean = variant_target_probs(model, &variants, x, targets)?;
    Ok(gap_report("self_transferability", &adv, &clean, targets.len())?
        .with("kind", kind)
        .with("intensities", grid.len())
        .with("variants", variants.len()))
}

pub fn self_transferability<T: Scalar>(
    model: &dyn Classifier<T>,
    kind: TransformKind,
    x_adv: &Array4<T>,
    x: &Array4<T>,
    targets: &[usize],
    grid: &IntensityGrid,
) -> Result<f64> {
    Ok(self_transferability_with(model, kind, x_adv, x, targets, grid, TwoAxisLattice::new(DEFAULT_LATTICE_SEED))?.value)
}

/// Mean over models and samples of the target-probability gain.
pub fn blackbox_transferability<T: Scalar>(models: &[&dyn Classifier<T>], x_adv: &Array4<T>, x: &Array4<T>, targets: &[usize]) -> Result<MetricReport> {
    if models.is_empty() {
        return Err(invalid("at least one model is required"));
    }
    if x_adv.dim() != x.dim() || targets.len() != x.dim().0 {
        return Err(invalid("batches and targets must align"));
    }
    let mut adv = Vec::new();
    let mut clean = Vec::new();
    for m in models {
        adv.extend(target_probs(*m, x_adv, targets)?);
        clean.extend(target_probs(*m, x, targets)?);
    }
    Ok(gap_report("blackbox_transferability", &adv, &clean, targets.len())?.with("models", models.len()))
}

/// Self-alignment: kNN overlap between the surrogate's features of
/// transformed adversarial examples and of clean images, averaged over
/// variants.
pub fn self_alignment<T: Scalar>(model: &Network<T>, variants: &[TransformVariant], x_adv: &Array4<T>, x: &Array4<T>, k: usize) -> Result<f64> {
    if variants.is_empty() {
        return Err(invalid("no variants"));
    }
    let clean = extract_representations(model, "surrogate", x, InputTag::Clean)?;
    let mut total = 0.0;
    for v in variants {
        let adv = extract_representations(model, "surrogate", &apply_batch(v, x_adv)?, InputTag::TransformedAdversarial)?;
        total += knn_overlap_alignment(&adv, &clean, k)?;
    }
    Ok(total / variants.len() as f64)
}

/// Mean cross-entropy of `model` on transformed images against their true
/// labels. Image `i` draws from stream `i` of `seed`.
pub fn diversity_metric<T: Scalar>(
    model: &dyn Classifier<T>,
    transform: &dyn InputTransform<T>,
    images: &Array4<T>,
    labels: &[usize],
    seed: u64,
) -> Result<MetricReport> {
    if labels.len() != images.dim().0 {
        return Err(invalid("labels and images must align"));
    }
    let root = RngState::new(seed);
    let mut per = Vec::with_capacity(labels.len());
    for (i, img) in images.axis_iter(Axis(0)).enumerate() {
        let out = transform.forward(img, &mut root.derive(i as u64).generator())?;
        let logits = model.logits(&out.output.insert_axis(Axis(0)))?;
        let row: Vec<T> = logits.row(0).to_vec();
        per.push(crate::attack::loss_value(&row, labels[i], crate::attack::LossKind::CrossEntropy)?.f64());
    }
    Ok(MetricReport::new("diversity", per)?.with("transform", transform.id()))
}

/// Grad-CAM from a `C × h × w` feature map and the label-logit gradient.
pub fn grad_cam_from_parts(fmap: ArrayView3<f64>, grad: ArrayView3<f64>) -> Result<Array2<f64>> {
    if fmap.dim() != grad.dim() {
        return Err(invalid("feature map and gradient shapes differ"));
    }
    let (c, h, w) = fmap.dim();
    let mut cam = Array2::<f64>::zeros((h, w));
    for ch in 0..c {
        let weight = grad.index_axis(Axis(0), ch).mean().unwrap_or(0.0);
        cam.scaled_add(weight, &fmap.index_axis(Axis(0), ch));
    }
    cam.mapv_inplace(|v| v.max(0.0));
    let (lo, hi) = cam.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi > lo {
        cam.mapv_inplace(|v| (v - lo) / (hi - lo));
    } else {
        cam.fill(0.0);
    }
    Ok(cam)
}

/// Grad-CAM heatmap of `label` on the model's last convolutional map.
pub fn grad_cam<T: Scalar>(model: &Network<T>, image: ArrayView3<T>, label: usize) -> Result<Array2<f64>> {
    let (fmap, grad) = model.cam_parts(image, label)?;
    grad_cam_from_parts(fmap.mapv(|v| v.f64()).view(), grad.mapv(|v| v.f64()).view())
}

/// IoU of two boolean masks; two empty masks count as identical.
pub fn iou(a: &Array2<bool>, b: &Array2<bool>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(invalid("mask shapes differ"));
    }
    let inter = a.iter().zip(b.iter()).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b.iter()).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn resample(map: &SampleMap<f64>, plane: &Array2<f64>) -> Array2<f64> {
    let x = plane.view().insert_axis(Axis(0));
    map.apply(x).index_axis_move(Axis(0), 0)
}

/// Warp taking a heatmap in the frame of `variant(x)` back to the frame of
/// an `h × w` input, when the geometry is invertible.
fn inverse_warp(variant: &TransformVariant, h: usize, w: usize, from: (usize, usize)) -> Result<Option<SampleMap<f64>>> {
    let tan = |d: f64| d.clamp(-MAX_SHEAR_DEGREES, MAX_SHEAR_DEGREES).to_radians().tan();
    Ok(match variant.params {
        VariantParams::Rotation { degrees } => {
            let (sin, cos) = degrees.to_radians().sin_cos();
            Some(affine_map(h, w, [[cos, sin], [-sin, cos]], (0.0, 0.0)))
        }
        VariantParams::Scaling { .. } => Some(SampleMap::resize(from, h, w)),
        VariantParams::Shear { x_degrees, y_degrees } => {
            let (a, b) = (tan(x_degrees), tan(y_degrees));
            Some(affine_map(h, w, [[1.0, a], [b, 1.0 + a * b]], (0.0, 0.0)))
        }
        VariantParams::Perspective { distortion_scale } => {
            let (start, end) = perspective_corners(h, w, distortion_scale);
            Some(perspective_map(h, w, end, start)?)
        }
        VariantParams::Flip { axis } => Some(flip_map(h, w, axis == FlipAxis::Vertical)),
        VariantParams::Translate { x_frac, y_frac } => {
            Some(affine_map(h, w, [[1.0, 0.0], [0.0, 1.0]], (-x_frac * h as f64, -y_frac * w as f64)))
        }
        _ => None,
    })
}

/// IoU between thresholded Grad-CAM maps of `image` and of
/// `variant(image)`. Maps are compared at input resolution; invertible
/// geometric variants are warped back first, anything else is resized.
pub fn attention_deviation<T: Scalar>(
    model: &Network<T>,
    image: ArrayView3<T>,
    variant: &TransformVariant,
    label: usize,
    threshold: f64,
) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("threshold {threshold} outside (0,1)")));
    }
    let (_, h, w) = image.dim();
    let up = |cam: Array2<f64>, to: (usize, usize)| {
        let map = SampleMap::<f64>::resize(cam.dim(), to.0, to.1);
        resample(&map, &cam)
    };
    let base = up(grad_cam(model, image, label)?, (h, w));
    let moved = apply_differentiable(variant, image)?.output.mapv(|v| v.max(T::zero()).min(T::one()));
    let (_, oh, ow) = moved.dim();
    let cam_t = up(grad_cam(model, moved.view(), label)?, (oh, ow));
    let back = match inverse_warp(variant, h, w, (oh, ow))? {
        Some(map) => resample(&map, &cam_t),
        None if (oh, ow) == (h, w) => cam_t,
        None => up(cam_t, (h, w)),
    };
    iou(&base.mapv(|v| v >= threshold), &back.mapv(|v| v >= threshold))
}

/// Mean of the per-iteration gradient norms.
pub fn gradient_magnitude_metric<T>(result: &AttackResult<T>) -> Result<f64> {
    gradient_magnitude(&result.grad_norm_trace)
}

pub fn gradient_magnitude(trace: &[f64]) -> Result<f64> {
    if trace.is_empty() {
        return Err(invalid("empty gradient-norm trace"));
    }
    Ok(trace.iter().sum::<f64>() / trace.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::nn::{Conv2d, Layer, Linear};
    use crate::transform::Identity;
    use crate::transform_kit::{enumerate_variants, intensity_grid};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array3};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn set(v: Array2<f64>) -> RepresentationSet {
        RepresentationSet::new(v, "m", InputTag::Clean).unwrap()
    }

    fn brute_knn(v: &Array2<f64>, i: usize, k: usize) -> Vec<usize> {
        let cos = |a: usize, b: usize| {
            let (x, y) = (v.row(a), v.row(b));
            1.0 - x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt())
        };
        let mut best: Vec<usize> = Vec::new();
        let mut pool: Vec<usize> = (0..v.nrows()).filter(|&j| j != i).collect();
        for _ in 0..k {
            let (pos, _) = pool
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |(bp, bd), (p, &j)| if cos(i, j) < bd { (p, cos(i, j)) } else { (bp, bd) });
            best.push(pool.remove(pos));
        }
        best
    }

    #[test]
    fn knn_hand_example() {
        // Points on the unit circle, given by angle in degrees.
        let pts = |deg: &[f64]| Array2::from_shape_fn((deg.len(), 2), |(i, j)| if j == 0 { deg[i].to_radians().cos() } else { deg[i].to_radians().sin() });
        let a = set(pts(&[0.0, 10.0, 80.0, 90.0, 175.0]));
        let b = set(pts(&[0.0, 45.0, 50.0, 95.0, 100.0]));
        // A: 0->{1,2} 1->{0,2} 2->{3,1} 3->{2,1} 4->{3,2}
        // B: 0->{1,2} 1->{2,0} 2->{1,3} 3->{4,2} 4->{3,2}
        let per = knn_overlap_per_item(&a, &b, 2).unwrap();
        assert_eq!(per, vec![1.0, 1.0, 1.0, 0.5, 1.0]);
        assert_abs_diff_eq!(knn_overlap_alignment(&a, &b, 2).unwrap(), 0.9);
        assert!(knn_overlap_alignment(&a, &b, 5).is_err());
    }

    #[test]
    fn knn_matches_brute_force_and_is_symmetric() {
        let mut rng = RngState::new(4).generator();
        for trial in 0..20 {
            let b = rng.random_range(6..20);
            let k = rng.random_range(1..=5.min(b - 1));
            let d = rng.random_range(2..6);
            let va = Array2::from_shape_fn((b, d), |_| rng.sample::<f64, _>(StandardNormal));
            let vb = Array2::from_shape_fn((b, d), |_| rng.sample::<f64, _>(StandardNormal));
            let want: f64 = (0..b)
                .map(|i| {
                    let (x, y) = (brute_knn(&va, i, k), brute_knn(&vb, i, k));
                    x.iter().filter(|j| y.contains(j)).count() as f64 / k as f64
                })
                .sum::<f64>()
                / b as f64;
            let (sa, sb) = (set(va.clone()), set(vb.clone()));
            let got = knn_overlap_alignment(&sa, &sb, k).unwrap();
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            assert_eq!(got, knn_overlap_alignment(&sb, &sa, k).unwrap(), "trial {trial}");
            assert_eq!(got, knn_overlap_alignment(&set(va.mapv(|v| 3.5 * v)), &sb, k).unwrap());
            let perm: Vec<usize> = (0..b).rev().collect();
            let pa = set(va.select(Axis(0), &perm));
            let pb = set(vb.select(Axis(0), &perm));
            assert_abs_diff_eq!(knn_overlap_alignment(&pa, &pb, k).unwrap(), got, epsilon = 1e-12);
            assert_eq!(knn_overlap_alignment(&sa, &sa, k).unwrap(), 1.0);
        }
    }

    fn tiny() -> Network<f64> {
        let mut rng = RngState::new(21).generator();
        Network::new(
            "tiny",
            3,
            vec![
                Layer::Conv2d(Conv2d::new(3, 4, 3, 1, 1, &mut rng)),
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Conv2d(Conv2d::new(4, 5, 3, 1, 1, &mut rng)),
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Linear(Linear::new(5, 3, &mut rng)),
            ],
        )
        .unwrap()
    }

    fn batch(n: usize, h: usize, salt: usize) -> Array4<f64> {
        Array4::from_shape_fn((n, 3, h, h), |(i, c, y, x)| ((i * 5 + c * 3 + y * 7 + x * 11 + salt) % 17) as f64 / 16.0)
    }

    #[test]
    fn feature_hook_by_hand() {
        // Flatten a 1-channel-per-color 4x4 input, 2 hidden units, ReLU.
        let mut w = Array2::zeros((2, 48));
        w[[0, 0]] = 1.0;
        w[[0, 17]] = -2.0;
        w[[1, 47]] = 0.5;
        let net = Network::new(
            "hand",
            2,
            vec![
                Layer::Flatten,
                Layer::Linear(Linear { weight: w, bias: array![0.6, -0.1] }),
                Layer::Relu,
                Layer::Linear(Linear { weight: Array2::eye(2), bias: Array1::zeros(2) }),
            ],
        )
        .unwrap();
        let x = Array4::from_shape_fn((2, 3, 4, 4), |(i, c, y, xx)| if i == 0 { 0.5 } else { (c * 16 + y * 4 + xx) as f64 / 47.0 });
        let r = extract_representations(&net, "hand", &x, InputTag::Clean).unwrap();
        assert_abs_diff_eq!(r.vectors[[0, 0]], 0.5 - 1.0 + 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(r.vectors[[0, 1]], 0.25 - 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(r.vectors[[1, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.vectors[[1, 1]], 0.5 - 0.1, epsilon = 1e-12);
        let dup = ndarray::concatenate(Axis(0), &[x.slice(s![0..1, .., .., ..]), x.slice(s![0..1, .., .., ..])]).unwrap();
        let r = extract_representations(&net, "hand", &dup, InputTag::Clean).unwrap();
        assert_eq!(r.vectors.row(0), r.vectors.row(1));
    }

    #[test]
    fn self_transferability_explicit_loop() {
        let net = tiny();
        let x = batch(3, 12, 0);
        let xa = batch(3, 12, 5);
        let targets = [0usize, 2, 1];
        let grid = IntensityGrid::from_values(vec![0.25, 0.75]).unwrap();
        let got = self_transferability(&net, TransformKind::Rotation, &xa, &x, &targets, &grid).unwrap();
        let mut gaps = Vec::new();
        for &s in grid.values() {
            for v in enumerate_variants(TransformKind::Rotation, s, None).unwrap() {
                for i in 0..3 {
                    let p = |b: &Array4<f64>| {
                        let img = crate::transform_kit::apply(&v, &crate::Image::new(b.index_axis(Axis(0), i).to_owned()).unwrap()).unwrap();
                        net.probabilities(&img.into_pixels().insert_axis(Axis(0))).unwrap()[[0, targets[i]]]
                    };
                    gaps.push(p(&xa) - p(&x));
                }
            }
        }
        assert_eq!(gaps.len(), 12);
        assert_abs_diff_eq!(got, gaps.iter().sum::<f64>() / 12.0, epsilon = 1e-12);
        assert_eq!(self_transferability(&net, TransformKind::Shear, &x, &x, &targets, &intensity_grid(3).unwrap()).unwrap(), 0.0);
        let zero = IntensityGrid::from_values(vec![0.0]).unwrap();
        let plain = blackbox_transferability(&[&net as &dyn Classifier<f64>], &xa, &x, &targets).unwrap().value;
        assert_abs_diff_eq!(self_transferability(&net, TransformKind::Hue, &xa, &x, &targets, &zero).unwrap(), plain, epsilon = 1e-12);
    }

    struct Fixed(Array2<f64>);

    impl Classifier<f64> for Fixed {
        fn classes(&self) -> usize {
            self.0.ncols()
        }
        fn logits(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
            Ok(self.0.slice(s![..x.dim().0, ..]).to_owned())
        }
        fn probabilities(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
            // The logged value depends on the mean pixel: clean batches are 0.
            let mean = x.mean().unwrap();
            Ok(self.0.slice(s![..x.dim().0, ..]).mapv(|v| v * mean))
        }
    }

    #[test]
    fn blackbox_examples() {
        let x = Array4::zeros((2, 3, 8, 8));
        let xa = Array4::from_elem((2, 3, 8, 8), 1.0);
        let m1 = Fixed(array![[0.7, 0.3], [0.4, 0.6]]);
        let m2 = Fixed(array![[0.2, 0.8], [0.9, 0.1]]);
        let r = blackbox_transferability(&[&m1 as &dyn Classifier<f64>, &m2], &xa, &x, &[0, 1]).unwrap();
        assert_abs_diff_eq!(r.value, (0.7 + 0.6 + 0.2 + 0.1) / 4.0, epsilon = 1e-12);
        assert_eq!(blackbox_transferability(&[&m1 as &dyn Classifier<f64>], &x, &x, &[0, 1]).unwrap().value, 0.0);
    }

    #[test]
    fn diversity_examples() {
        let uniform = Network::new("u", 4, vec![Layer::GlobalAvgPool, Layer::Linear(Linear { weight: Array2::zeros((4, 3)), bias: Array1::zeros(4) })]).unwrap();
        let x = batch(3, 8, 1);
        let r = diversity_metric(&uniform, &Identity, &x, &[0, 1, 3], 0).unwrap();
        assert_abs_diff_eq!(r.value, 4f64.ln(), epsilon = 1e-12);
        let sure = Network::new("s", 2, vec![Layer::GlobalAvgPool, Layer::Linear(Linear { weight: Array2::zeros((2, 3)), bias: array![60.0, 0.0] })]).unwrap();
        assert!(diversity_metric(&sure, &Identity, &x, &[0, 0, 0], 0).unwrap().value < 1e-20);
        let net = tiny();
        let t = crate::transform::FixedVariant(enumerate_variants(TransformKind::Flip, 1.0, None).unwrap()[1]);
        let r = diversity_metric(&net, &t, &x, &[2, 0, 1], 0).unwrap();
        let mut want = 0.0;
        for i in 0..3 {
            let flipped = x.slice(s![i..i + 1, .., .., ..;-1]).to_owned();
            let l = net.logits(&flipped).unwrap();
            want += crate::attack::loss_value(&l.row(0).to_vec(), [2, 0, 1][i], crate::attack::LossKind::CrossEntropy).unwrap();
        }
        assert_abs_diff_eq!(r.value, want / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn grad_cam_oracles() {
        let fmap = Array3::from_elem((2, 3, 3), 0.4);
        assert!(grad_cam_from_parts(fmap.view(), Array3::zeros((2, 3, 3)).view()).unwrap().iter().all(|v| *v == 0.0));
        let one = Array3::from_shape_fn((1, 2, 2), |(_, y, x)| [[-1.0, 2.0], [0.5, 4.0]][y][x]);
        let cam = grad_cam_from_parts(one.view(), Array3::from_elem((1, 2, 2), 0.3).view()).unwrap();
        assert_eq!(cam, array![[0.0, 0.5], [0.125, 1.0]]);
        // Two channels, weights 0.5 and -0.25 (means of the gradients).
        let f = Array3::from_shape_vec((2, 2, 2), vec![1.0, 2.0, 3.0, 4.0, 4.0, 0.0, 0.0, 8.0]).unwrap();
        let g = Array3::from_shape_vec((2, 2, 2), vec![0.5, 0.5, 0.5, 0.5, 0.0, -1.0, 0.0, 0.0]).unwrap();
        // 0.5*f0 - 0.25*f1 = [-0.5, 1.0, 1.5, 0.0] -> relu [0, 1, 1.5, 0] -> /1.5
        let cam = grad_cam_from_parts(f.view(), g.view()).unwrap();
        for (got, want) in cam.iter().zip([0.0, 1.0 / 1.5, 1.0, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }

        let net = tiny();
        let x = batch(1, 12, 0);
        let heat = grad_cam(&net, x.index_axis(Axis(0), 0), 1).unwrap();
        assert_eq!(heat.dim(), (6, 6));
        assert!(heat.iter().all(|v| (0.0..=1.0).contains(v)));
        let headless = Network::new("flat", 2, vec![Layer::Flatten, Layer::Linear(Linear { weight: Array2::zeros((2, 432)), bias: Array1::zeros(2) })]).unwrap();
        assert!(matches!(grad_cam(&headless, x.index_axis(Axis(0), 0), 0), Err(Error::UnsupportedModel(_))));
    }

    #[test]
    fn iou_and_attention() {
        let a = Array2::from_shape_fn((4, 4), |(y, x)| y < 2 && x < 2);
        let b = Array2::from_shape_fn((4, 4), |(y, x)| y >= 2 && x >= 2);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&Array2::from_elem((3, 3), false), &Array2::from_elem((3, 3), false)).unwrap(), 1.0);
        // |∩| = 3, |∪| = 12.
        let c = Array2::from_shape_fn((4, 4), |(y, x)| y * 4 + x < 8);
        let d = Array2::from_shape_fn((4, 4), |(y, x)| (5..12).contains(&(y * 4 + x)));
        assert_eq!(iou(&c, &d).unwrap(), 0.25);

        let net = tiny();
        let x = batch(1, 16, 3);
        let img = x.index_axis(Axis(0), 0);
        for kind in [TransformKind::Rotation, TransformKind::Hue, TransformKind::Crop, TransformKind::Translate] {
            let pair = kind.is_two_axis().then_some((0.0, 0.0));
            let v = enumerate_variants(kind, 0.0, pair).unwrap()[0];
            assert_eq!(attention_deviation(&net, img, &v, 2, CAM_THRESHOLD).unwrap(), 1.0, "{kind}");
        }
        let flip = enumerate_variants(TransformKind::Flip, 0.5, None).unwrap()[1];
        let dev = attention_deviation(&net, img, &flip, 2, CAM_THRESHOLD).unwrap();
        assert!((0.0..=1.0).contains(&dev));
        for kind in TransformKind::ALL {
            let pair = kind.is_two_axis().then_some((0.4, 0.3));
            for v in enumerate_variants(kind, 0.6, pair).unwrap() {
                let dev = attention_deviation(&net, img, &v, 2, CAM_THRESHOLD).unwrap();
                assert!((0.0..=1.0).contains(&dev), "{kind}");
            }
        }
    }

    #[test]
    fn gradient_magnitude_examples() {
        assert_eq!(gradient_magnitude(&[2.5; 7]).unwrap(), 2.5);
        assert_eq!(gradient_magnitude(&[1.0, 3.0]).unwrap(), 2.0);
        assert!(gradient_magnitude(&[]).is_err());
    }
}
