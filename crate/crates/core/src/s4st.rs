//! The composed S⁴ST transformation.
//!
//! * Base: dimension-preserving bidirectional scaling. A relative factor
//!   `r' ~ U(1/r, r)` either shrinks the image and zero-pads it back at a
//!   random offset, or crops a random `1/r'` window and enlarges it.
//! * Aug: one transformation drawn uniformly from a complementary pool
//!   (flip, brightness, contrast, saturation, hue) applied to the whole image.
//! * Block: the canvas is cut into `m = m_h × m_w` random-sized blocks and
//!   Base runs independently on each.
//!
//! Composition order is Aug, then Block(Base).

use ndarray::ArrayView3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::ops::{flip_map, ColorOp, Rect, SampleMap, Transformed};
use crate::scalar::Scalar;
use crate::transform_kit::{round_dim, FlipAxis};

/// Largest minimum block side used when cutting the canvas.
pub const MAX_MIN_BLOCK_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct S4STParams {
    pub p_r: f64,
    pub r: f64,
    pub p_aug: f64,
    pub m: usize,
}

impl Default for S4STParams {
    fn default() -> Self {
        Self { p_r: 0.9, r: 1.7, p_aug: 1.0, m: 6 }
    }
}

impl S4STParams {
    pub fn new(p_r: f64, r: f64, p_aug: f64, m: usize) -> Result<Self> {
        let p = Self { p_r, r, p_aug, m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_r) {
            return Err(invalid(format!("p_r = {} outside [0,1]", self.p_r)));
        }
        if !(0.0..=1.0).contains(&self.p_aug) {
            return Err(invalid(format!("p_aug = {} outside [0,1]", self.p_aug)));
        }
        if !(self.r > 1.0) || !self.r.is_finite() {
            return Err(invalid(format!("r = {} must be a finite value > 1", self.r)));
        }
        if self.m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        Ok(())
    }

    /// Base only: `[p_r, r, 0, 1]`.
    pub fn base_only(&self) -> Self {
        Self { p_aug: 0.0, m: 1, ..*self }
    }

    /// Base + Aug: `[p_r, r, p_aug, 1]`.
    pub fn without_block(&self) -> Self {
        Self { m: 1, ..*self }
    }

    /// Base + Block: `[p_r, r, 0, m]`.
    pub fn without_aug(&self) -> Self {
        Self { p_aug: 0.0, ..*self }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

/// Where the `p_r` gate is evaluated in the block-wise stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockGate {
    #[default]
    PerBlock,
    Global,
}

/// Outcome of one Base draw, in block-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BaseDraw {
    /// The `p_r` gate failed.
    Skipped,
    /// `r'` left the block unchanged.
    Unit { factor: f64 },
    /// Content shrunk into `inner`, zero elsewhere.
    Reduce { factor: f64, inner: Rect },
    /// `crop` enlarged to the full block.
    Enlarge { factor: f64, crop: Rect },
}

impl BaseDraw {
    /// Zero-padded pixel count inside a block of size `(h, w)`.
    pub fn pad_area(&self, h: usize, w: usize) -> usize {
        match self {
            BaseDraw::Reduce { inner, .. } => h * w - inner.area(),
            _ => 0,
        }
    }
}

/// Resolves a forced factor `r'` into a draw for an `h × w` block.
pub fn base_draw_for_factor<R: Rng + ?Sized>(h: usize, w: usize, factor: f64, rng: &mut R) -> Result<BaseDraw> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(invalid(format!("scale factor {factor} must be positive")));
    }
    if factor < 1.0 {
        let ih = round_dim(factor * h as f64).clamp(1, h);
        let iw = round_dim(factor * w as f64).clamp(1, w);
        if (ih, iw) == (h, w) {
            return Ok(BaseDraw::Unit { factor });
        }
        let y = rng.random_range(0..=h - ih);
        let x = rng.random_range(0..=w - iw);
        Ok(BaseDraw::Reduce { factor, inner: Rect::new(y, x, ih, iw) })
    } else if factor > 1.0 {
        let ch = round_dim(h as f64 / factor).clamp(1, h);
        let cw = round_dim(w as f64 / factor).clamp(1, w);
        if (ch, cw) == (h, w) {
            return Ok(BaseDraw::Unit { factor });
        }
        let y = rng.random_range(0..=h - ch);
        let x = rng.random_range(0..=w - cw);
        Ok(BaseDraw::Enlarge { factor, crop: Rect::new(y, x, ch, cw) })
    } else {
        Ok(BaseDraw::Unit { factor })
    }
}

/// Draws the Base outcome: with probability `p_r`, `r' ~ U(1/r, r)`.
pub fn draw_base<R: Rng + ?Sized>(h: usize, w: usize, r: f64, p_r: f64, rng: &mut R) -> Result<BaseDraw> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(invalid(format!("r = {r} must be a finite value > 1")));
    }
    if !(0.0..=1.0).contains(&p_r) {
        return Err(invalid(format!("p_r = {p_r} outside [0,1]")));
    }
    if rng.random::<f64>() >= p_r {
        return Ok(BaseDraw::Skipped);
    }
    let factor = rng.random_range(1.0 / r..r);
    draw_ungated(h, w, factor, rng)
}

fn draw_ungated<R: Rng + ?Sized>(h: usize, w: usize, factor: f64, rng: &mut R) -> Result<BaseDraw> {
    base_draw_for_factor(h, w, factor, rng)
}

/// Writes the Base draw for `block` into a full-canvas sample map.
fn fill_block<T: Scalar>(map: &mut SampleMap<T>, block: Rect, draw: &BaseDraw) {
    let shift = |r: &Rect| Rect::new(block.y + r.y, block.x + r.x, r.h, r.w);
    match draw {
        BaseDraw::Skipped | BaseDraw::Unit { .. } => map.resize_region(block, block),
        BaseDraw::Reduce { inner, .. } => map.resize_region(block, shift(inner)),
        BaseDraw::Enlarge { crop, .. } => map.resize_region(shift(crop), block),
    }
}

fn single_block_map<T: Scalar>(h: usize, w: usize, draw: &BaseDraw) -> Option<SampleMap<T>> {
    if matches!(draw, BaseDraw::Skipped | BaseDraw::Unit { .. }) {
        return None;
    }
    let mut map = SampleMap::zeros((h, w), (h, w));
    fill_block(&mut map, Rect::full(h, w), draw);
    Some(map)
}

pub fn s4st_base<T: Scalar, R: Rng + ?Sized>(image: &Image<T>, r: f64, p_r: f64, rng: &mut R) -> Result<Image<T>> {
    let (h, w) = image.dims();
    let draw = draw_base(h, w, r, p_r, rng)?;
    Ok(apply_base_draw(image, &draw))
}

/// Base with a forced `r'`; only the offset is random.
pub fn s4st_base_with_factor<T: Scalar, R: Rng + ?Sized>(image: &Image<T>, factor: f64, rng: &mut R) -> Result<(Image<T>, BaseDraw)> {
    let (h, w) = image.dims();
    let draw = base_draw_for_factor(h, w, factor, rng)?;
    Ok((apply_base_draw(image, &draw), draw))
}

pub fn apply_base_draw<T: Scalar>(image: &Image<T>, draw: &BaseDraw) -> Image<T> {
    let (h, w) = image.dims();
    match single_block_map(h, w, draw) {
        None => image.clone(),
        Some(map) => Image::from_raw(map.apply(image.view())),
    }
}

/// Outcome of one Aug draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AugDraw {
    Skipped,
    Flip { axis: FlipAxis },
    Brightness { factor: f64 },
    Contrast { factor: f64 },
    Saturation { factor: f64 },
    Hue { factor: f64 },
}

impl AugDraw {
    /// Index of the pool member, `None` when skipped.
    pub fn pool_index(&self) -> Option<usize> {
        match self {
            AugDraw::Skipped => None,
            AugDraw::Flip { .. } => Some(0),
            AugDraw::Brightness { .. } => Some(1),
            AugDraw::Contrast { .. } => Some(2),
            AugDraw::Saturation { .. } => Some(3),
            AugDraw::Hue { .. } => Some(4),
        }
    }
}

/// Number of transformations in the Aug pool.
pub const AUG_POOL_SIZE: usize = 5;

pub fn draw_aug<R: Rng + ?Sized>(p_aug: f64, rng: &mut R) -> Result<AugDraw> {
    if !(0.0..=1.0).contains(&p_aug) {
        return Err(invalid(format!("p_aug = {p_aug} outside [0,1]")));
    }
    if rng.random::<f64>() >= p_aug {
        return Ok(AugDraw::Skipped);
    }
    Ok(match rng.random_range(0..AUG_POOL_SIZE) {
        0 => AugDraw::Flip { axis: if rng.random::<bool>() { FlipAxis::Vertical } else { FlipAxis::Horizontal } },
        1 => AugDraw::Brightness { factor: rng.random_range(0.0..2.0) },
        2 => AugDraw::Contrast { factor: rng.random_range(0.0..2.0) },
        3 => AugDraw::Saturation { factor: rng.random_range(0.0..2.0) },
        _ => AugDraw::Hue { factor: rng.random_range(-0.5..0.5) },
    })
}

pub fn apply_aug_draw<T: Scalar>(t: Transformed<T>, draw: &AugDraw) -> Transformed<T> {
    let (h, w) = (t.output.dim().1, t.output.dim().2);
    match *draw {
        AugDraw::Skipped => t,
        AugDraw::Flip { axis } => t.sample(flip_map(h, w, axis == FlipAxis::Vertical)),
        AugDraw::Brightness { factor } => t.color(ColorOp::Brightness(factor)),
        AugDraw::Contrast { factor } => t.color(ColorOp::Contrast(factor)),
        AugDraw::Saturation { factor } => t.color(ColorOp::Saturation(factor)),
        AugDraw::Hue { factor } => t.color(ColorOp::Hue(factor)),
    }
}

pub fn s4st_aug<T: Scalar, R: Rng + ?Sized>(image: &Image<T>, p_aug: f64, rng: &mut R) -> Result<Image<T>> {
    let draw = draw_aug(p_aug, rng)?;
    Image::from_clamped(apply_aug_draw(Transformed::identity(image.view()), &draw).output)
}

/// Ordered factor pairs `(a, b)` with `a · b = m`, in increasing `a`.
pub fn ordered_factor_pairs(m: usize) -> Vec<(usize, usize)> {
    (1..=m).filter(|a| m % a == 0).map(|a| (a, m / a)).collect()
}

/// Draws `(m_h, m_w)` uniformly from the ordered factor pairs of `m`.
pub fn sample_block_grid<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<(usize, usize)> {
    if m == 0 {
        return Err(invalid("block count must be at least 1"));
    }
    let pairs = ordered_factor_pairs(m);
    Ok(pairs[rng.random_range(0..pairs.len())])
}

/// Minimum side used when cutting `len` pixels into `n` segments.
pub fn min_block_side(len: usize, n: usize) -> Result<usize> {
    if len < 2 * n {
        return Err(invalid(format!("cannot cut {len} pixels into {n} blocks of at least 2 pixels")));
    }
    Ok((len / (2 * n)).clamp(2, MAX_MIN_BLOCK_SIDE))
}

/// Random segment lengths summing to `len`, each at least [`min_block_side`].
pub fn draw_segments<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let min_side = min_block_side(len, n)?;
    let slack = len - n * min_side;
    let mut cuts: Vec<usize> = (0..n - 1).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut prev = 0;
    let mut out = Vec::with_capacity(n);
    for c in cuts.into_iter().chain(std::iter::once(slack)) {
        out.push(min_side + c - prev);
        prev = c;
    }
    Ok(out)
}

fn segments_to_offsets(sizes: &[usize]) -> Vec<(usize, usize)> {
    let mut at = 0;
    sizes
        .iter()
        .map(|&s| {
            let o = (at, s);
            at += s;
            o
        })
        .collect()
}

/// Per-block record of a full S⁴ST draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTrace {
    pub rect: Rect,
    pub draw: BaseDraw,
}

/// Every random decision of one S⁴ST application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S4STTrace {
    pub aug: AugDraw,
    pub grid: (usize, usize),
    pub blocks: Vec<BlockTrace>,
}

impl S4STTrace {
    /// Total zero-padded pixels over all blocks.
    pub fn pad_area(&self) -> usize {
        self.blocks.iter().map(|b| b.draw.pad_area(b.rect.h, b.rect.w)).sum()
    }
}

/// Differentiable S⁴ST on raw `3 × H × W` pixels, with its full trace.
pub fn s4st_traced<T: Scalar, R: Rng + ?Sized>(
    x: ArrayView3<T>,
    params: &S4STParams,
    gate: BlockGate,
    rng: &mut R,
) -> Result<(Transformed<T>, S4STTrace)> {
    params.validate()?;
    let (_, h, w) = x.dim();
    let aug = draw_aug(params.p_aug, rng)?;
    let grid = sample_block_grid(params.m, rng)?;
    let rows = draw_segments(h, grid.0, rng)?;
    let cols = draw_segments(w, grid.1, rng)?;
    let global_pass = match gate {
        BlockGate::Global => Some(rng.random::<f64>() < params.p_r),
        BlockGate::PerBlock => None,
    };
    let mut blocks = Vec::with_capacity(params.m);
    for &(y, bh) in &segments_to_offsets(&rows) {
        for &(xo, bw) in &segments_to_offsets(&cols) {
            let draw = match global_pass {
                None => draw_base(bh, bw, params.r, params.p_r, rng)?,
                Some(false) => BaseDraw::Skipped,
                Some(true) => {
                    let factor = rng.random_range(1.0 / params.r..params.r);
                    draw_ungated(bh, bw, factor, rng)?
                }
            };
            blocks.push(BlockTrace { rect: Rect::new(y, xo, bh, bw), draw });
        }
    }
    let mut t = apply_aug_draw(Transformed::identity(x), &aug);
    if blocks.iter().any(|b| !matches!(b.draw, BaseDraw::Skipped | BaseDraw::Unit { .. })) {
        let mut map = SampleMap::zeros((h, w), (h, w));
        for b in &blocks {
            fill_block(&mut map, b.rect, &b.draw);
        }
        t = t.sample(map);
    }
    Ok((t, S4STTrace { aug, grid, blocks }))
}

pub fn s4st_full<T: Scalar, R: Rng + ?Sized>(image: &Image<T>, params: &S4STParams, rng: &mut R) -> Result<Image<T>> {
    let (t, _) = s4st_traced(image.view(), params, BlockGate::PerBlock, rng)?;
    Image::from_clamped(t.output)
}
