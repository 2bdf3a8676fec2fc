//! The twelve basic transformations under a unified intensity `s ∈ [0,1]`.
//!
//! [`enumerate_variants`] resolves a `(kind, s)` pair into every direction
//! variant with concrete parameters; [`apply`] executes one variant.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::ops::{affine_map, flip_map, perspective_map, ColorOp, Rect, SampleMap, Transformed};
use crate::rng::splitmix64;
use crate::scalar::Scalar;

/// Shear angles are capped here so `tan` stays finite at `s = 1`.
pub const MAX_SHEAR_DEGREES: f64 = 89.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Rotation,
    Scaling,
    Shear,
    Perspective,
    Flip,
    Crop,
    Translate,
    Solarize,
    Hue,
    Brightness,
    Contrast,
    Saturation,
}

impl TransformKind {
    pub const ALL: [TransformKind; 12] = [
        TransformKind::Rotation,
        TransformKind::Scaling,
        TransformKind::Shear,
        TransformKind::Perspective,
        TransformKind::Flip,
        TransformKind::Crop,
        TransformKind::Translate,
        TransformKind::Solarize,
        TransformKind::Hue,
        TransformKind::Brightness,
        TransformKind::Contrast,
        TransformKind::Saturation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::Rotation => "rotation",
            TransformKind::Scaling => "scaling",
            TransformKind::Shear => "shear",
            TransformKind::Perspective => "perspective",
            TransformKind::Flip => "flip",
            TransformKind::Crop => "crop",
            TransformKind::Translate => "translate",
            TransformKind::Solarize => "solarize",
            TransformKind::Hue => "hue",
            TransformKind::Brightness => "brightness",
            TransformKind::Contrast => "contrast",
            TransformKind::Saturation => "saturation",
        }
    }

    /// Number of direction variants enumerated per intensity.
    pub fn variant_count(&self) -> usize {
        match self {
            TransformKind::Shear | TransformKind::Translate => 4,
            TransformKind::Perspective | TransformKind::Crop | TransformKind::Solarize => 1,
            _ => 2,
        }
    }

    /// Shear and translate take an `(s1, s2)` pair instead of a single `s`.
    pub fn is_two_axis(&self) -> bool {
        matches!(self, TransformKind::Shear | TransformKind::Translate)
    }

    /// Photometric kinds: they leave geometry untouched.
    pub fn is_color(&self) -> bool {
        matches!(
            self,
            TransformKind::Solarize
                | TransformKind::Hue
                | TransformKind::Brightness
                | TransformKind::Contrast
                | TransformKind::Saturation
        )
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown transformation kind {s:?}")))
    }
}

/// Equally spaced intensities spanning `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityGrid {
    values: Vec<f64>,
}

impl IntensityGrid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Explicit intensities, each in `[0,1]`; not necessarily equally spaced.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("empty intensity grid"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self { values })
    }
}

pub fn intensity_grid(count: usize) -> Result<IntensityGrid> {
    match count {
        0 => Err(invalid("intensity grid needs at least one sample")),
        1 => Ok(IntensityGrid { values: vec![0.0] }),
        n => {
            let step = (n - 1) as f64;
            Ok(IntensityGrid { values: (0..n).map(|i| i as f64 / step).collect() })
        }
    }
}

/// Low-discrepancy `(s1, s2)` points in the unit square for the two-axis
/// kinds: an R2 sequence with a seeded Cranley–Patterson rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoAxisLattice {
    pub seed: u64,
}

impl TwoAxisLattice {
    const PLASTIC: f64 = 1.324_717_957_244_746;

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn point(&self, index: usize) -> (f64, f64) {
        let a1 = 1.0 / Self::PLASTIC;
        let a2 = 1.0 / (Self::PLASTIC * Self::PLASTIC);
        let h = splitmix64(self.seed);
        let u0 = (h >> 11) as f64 / (1u64 << 53) as f64;
        let v0 = (splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64;
        let n = index as f64;
        ((u0 + n * a1).fract(), (v0 + n * a2).fract())
    }

    pub fn points(&self, count: usize) -> Vec<(f64, f64)> {
        (0..count).map(|i| self.point(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxis {
    Vertical,
    Horizontal,
}

/// Concrete parameters of one variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VariantParams {
    Rotation { degrees: f64 },
    /// Output size is `round(factor * H) × round(factor * W)`.
    Scaling { factor: f64 },
    Shear { x_degrees: f64, y_degrees: f64 },
    Perspective { distortion_scale: f64 },
    Flip { axis: FlipAxis },
    /// Centered patch covering `area_fraction` of the frame.
    Crop { area_fraction: f64 },
    /// Offsets as signed fractions: x by `x_frac * H`, y by `y_frac * W`.
    Translate { x_frac: f64, y_frac: f64 },
    Solarize { threshold: f64 },
    Hue { factor: f64 },
    Brightness { factor: f64 },
    Contrast { factor: f64 },
    Saturation { factor: f64 },
}

/// One direction variant of a basic transformation at intensity `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformVariant {
    pub kind: TransformKind,
    pub s: f64,
    pub direction: usize,
    pub params: VariantParams,
}

impl TransformVariant {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {v} outside [0,1]")))
    }
}

/// Lists every direction variant of `kind` at intensity `s`. Shear and
/// translate read `(s1, s2)` from `grid_pair` instead.
pub fn enumerate_variants(kind: TransformKind, s: f64, grid_pair: Option<(f64, f64)>) -> Result<Vec<TransformVariant>> {
    check_unit("s", s)?;
    let params: Vec<VariantParams> = match kind {
        TransformKind::Rotation => vec![
            VariantParams::Rotation { degrees: s * 180.0 },
            VariantParams::Rotation { degrees: -s * 180.0 },
        ],
        TransformKind::Scaling => {
            let f = 1.0 + 1.5 * s;
            vec![VariantParams::Scaling { factor: f }, VariantParams::Scaling { factor: 1.0 / f }]
        }
        TransformKind::Shear | TransformKind::Translate => {
            let (s1, s2) = grid_pair.ok_or_else(|| invalid(format!("{kind} needs an (s1, s2) grid pair")))?;
            check_unit("s1", s1)?;
            check_unit("s2", s2)?;
            let signs = [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)];
            signs
                .iter()
                .map(|&(a, b)| match kind {
                    TransformKind::Shear => VariantParams::Shear { x_degrees: a * s1 * 90.0, y_degrees: b * s2 * 90.0 },
                    _ => VariantParams::Translate { x_frac: a * s1, y_frac: b * s2 },
                })
                .collect()
        }
        TransformKind::Perspective => vec![VariantParams::Perspective { distortion_scale: s }],
        TransformKind::Flip => vec![
            VariantParams::Flip { axis: FlipAxis::Vertical },
            VariantParams::Flip { axis: FlipAxis::Horizontal },
        ],
        TransformKind::Crop => vec![VariantParams::Crop { area_fraction: 1.0 - 0.95 * s }],
        TransformKind::Solarize => vec![VariantParams::Solarize { threshold: 1.0 - s }],
        TransformKind::Hue => vec![VariantParams::Hue { factor: -0.5 * s }, VariantParams::Hue { factor: 0.5 * s }],
        TransformKind::Brightness | TransformKind::Contrast | TransformKind::Saturation => {
            let f = 1.0 + 4.0 * s;
            let mk = |factor: f64| match kind {
                TransformKind::Brightness => VariantParams::Brightness { factor },
                TransformKind::Contrast => VariantParams::Contrast { factor },
                _ => VariantParams::Saturation { factor },
            };
            vec![mk(f), mk(1.0 / f)]
        }
    };
    Ok(params
        .into_iter()
        .enumerate()
        .map(|(direction, params)| TransformVariant { kind, s, direction, params })
        .collect())
}

/// All variants for every intensity of `grid`. Two-axis kinds draw the
/// `j`-th lattice point for the `j`-th intensity.
pub fn variants_over_grid(kind: TransformKind, grid: &IntensityGrid, lattice: TwoAxisLattice) -> Result<Vec<TransformVariant>> {
    let mut out = Vec::new();
    for (j, &s) in grid.values().iter().enumerate() {
        let pair = kind.is_two_axis().then(|| lattice.point(j));
        out.extend(enumerate_variants(kind, s, pair)?);
    }
    Ok(out)
}

/// Round half to even, as used for every derived pixel dimension.
pub fn round_dim(v: f64) -> usize {
    v.round_ties_even().max(0.0) as usize
}

fn positive_dim(v: f64, what: &str) -> Result<usize> {
    let d = round_dim(v);
    if d < 1 {
        return Err(invalid(format!("{what} rounds to {d} pixels")));
    }
    Ok(d)
}

/// Output dimensions of a scaling variant.
pub fn scaled_dims(h: usize, w: usize, factor: f64) -> Result<(usize, usize)> {
    Ok((positive_dim(factor * h as f64, "scaled height")?, positive_dim(factor * w as f64, "scaled width")?))
}

/// Centered crop rectangle keeping the frame's aspect ratio and covering
/// `area_fraction` of it.
pub fn crop_rect(h: usize, w: usize, area_fraction: f64) -> Result<Rect> {
    if area_fraction >= 1.0 {
        return Ok(Rect::full(h, w));
    }
    let side = area_fraction.max(0.0).sqrt();
    let ch = positive_dim(side * h as f64, "crop height")?.min(h);
    let cw = positive_dim(side * w as f64, "crop width")?.min(w);
    Ok(Rect::new((h - ch) / 2, (w - cw) / 2, ch, cw))
}

/// Corner displacement for the perspective variant: the top edge is pulled
/// inward by `distortion_scale · W/4` on each side (a keystone).
pub fn perspective_corners(h: usize, w: usize, distortion_scale: f64) -> ([(f64, f64); 4], [(f64, f64); 4]) {
    let (x1, y1) = ((w - 1) as f64, (h - 1) as f64);
    let start = [(0.0, 0.0), (x1, 0.0), (x1, y1), (0.0, y1)];
    let inset = distortion_scale * w as f64 / 4.0;
    let end = [(inset, 0.0), (x1 - inset, 0.0), (x1, y1), (0.0, y1)];
    (start, end)
}

fn shear_tan(deg: f64) -> f64 {
    deg.clamp(-MAX_SHEAR_DEGREES, MAX_SHEAR_DEGREES).to_radians().tan()
}

/// Applies a variant to raw `3 × H × W` pixels, recording the pullback.
pub fn apply_differentiable<T: Scalar>(variant: &TransformVariant, x: ArrayView3<T>) -> Result<Transformed<T>> {
    let (_, h, w) = x.dim();
    let t = Transformed::identity(x);
    Ok(match variant.params {
        VariantParams::Rotation { degrees } => {
            if degrees == 0.0 {
                t
            } else {
                // Output offset d maps back through the inverse rotation.
                let (sin, cos) = degrees.to_radians().sin_cos();
                t.sample(affine_map(h, w, [[cos, -sin], [sin, cos]], (0.0, 0.0)))
            }
        }
        VariantParams::Scaling { factor } => {
            let (nh, nw) = scaled_dims(h, w, factor)?;
            if (nh, nw) == (h, w) {
                t
            } else {
                t.sample(SampleMap::resize((h, w), nh, nw))
            }
        }
        VariantParams::Shear { x_degrees, y_degrees } => {
            let a = shear_tan(x_degrees);
            let b = shear_tan(y_degrees);
            // Forward [[1, a], [b, 1 + ab]] has unit determinant.
            t.sample(affine_map(h, w, [[1.0 + a * b, -a], [-b, 1.0]], (0.0, 0.0)))
        }
        VariantParams::Perspective { distortion_scale } => {
            let (start, end) = perspective_corners(h, w, distortion_scale);
            t.sample(perspective_map(h, w, start, end)?)
        }
        VariantParams::Flip { axis } => t.sample(flip_map(h, w, axis == FlipAxis::Vertical)),
        VariantParams::Crop { area_fraction } => {
            let rect = crop_rect(h, w, area_fraction)?;
            if rect == Rect::full(h, w) {
                t
            } else {
                let mut map = SampleMap::zeros((h, w), (rect.h, rect.w));
                map.resize_region(rect, Rect::full(rect.h, rect.w));
                t.sample(map)
            }
        }
        VariantParams::Translate { x_frac, y_frac } => {
            let shift = (x_frac * h as f64, y_frac * w as f64);
            t.sample(affine_map(h, w, [[1.0, 0.0], [0.0, 1.0]], shift))
        }
        VariantParams::Solarize { threshold } => t.color(ColorOp::Solarize(threshold)),
        VariantParams::Hue { factor } => t.color(ColorOp::Hue(factor)),
        VariantParams::Brightness { factor } => t.color(ColorOp::Brightness(factor)),
        VariantParams::Contrast { factor } => t.color(ColorOp::Contrast(factor)),
        VariantParams::Saturation { factor } => t.color(ColorOp::Saturation(factor)),
    })
}

/// Executes a variant on a validated image.
pub fn apply<T: Scalar>(variant: &TransformVariant, image: &Image<T>) -> Result<Image<T>> {
    let out = apply_differentiable(variant, image.view())?;
    Image::from_clamped(out.output)
}
