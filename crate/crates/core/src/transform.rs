//! Input transformations usable inside the attack loop.
//!
//! Every transformation maps a `3 × H × W` image to another `3 × H × W`
//! image and returns the pullback needed to route gradients back to the
//! input. Transformations are addressed by string ids:
//!
//! | id | meaning |
//! |----|---------|
//! | `identity` | no-op |
//! | `s4st`, `s4st[p_r,r,p_aug,m]` | S⁴ST, optional `:global` suffix for a single `p_r` gate |
//! | `basic:<kind>:<s>` | one basic transformation at random intensity `≤ s` |
//! | `di`, `di[p,ratio]` | resize into a random larger canvas with padding, then back |
//! | `rdi`, `rdi[p,ratio]` | same recipe with the wider resized-DI ratio |

use ndarray::ArrayView3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::ops::{Rect, SampleMap, Transformed};
use crate::s4st::{s4st_traced, BlockGate, S4STParams};
use crate::scalar::Scalar;
use crate::transform_kit::{apply_differentiable, enumerate_variants, round_dim, TransformKind, TransformVariant};

/// Probability that a basic transformation fires in an attack step.
pub const BASIC_PROB: f64 = 0.9;

pub trait InputTransform<T: Scalar>: Send + Sync {
    fn id(&self) -> String;

    fn forward(&self, x: ArrayView3<T>, rng: &mut ChaCha8Rng) -> Result<Transformed<T>>;

    /// True when `forward` ignores the generator.
    fn is_deterministic(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl<T: Scalar> InputTransform<T> for Identity {
    fn id(&self) -> String {
        "identity".into()
    }

    fn forward(&self, x: ArrayView3<T>, _rng: &mut ChaCha8Rng) -> Result<Transformed<T>> {
        Ok(Transformed::identity(x))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct S4ST {
    pub params: S4STParams,
    pub gate: BlockGate,
}

impl S4ST {
    pub fn new(params: S4STParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, gate: BlockGate::PerBlock })
    }
}

impl<T: Scalar> InputTransform<T> for S4ST {
    fn id(&self) -> String {
        let p = &self.params;
        let mut s = format!("s4st[{},{},{},{}]", p.p_r, p.r, p.p_aug, p.m);
        if self.gate == BlockGate::Global {
            s.push_str(":global");
        }
        s
    }

    fn forward(&self, x: ArrayView3<T>, rng: &mut ChaCha8Rng) -> Result<Transformed<T>> {
        Ok(s4st_traced(x, &self.params, self.gate, rng)?.0)
    }

    fn is_deterministic(&self) -> bool {
        self.params.p_r == 0.0 && self.params.p_aug == 0.0
    }
}

/// Copies the overlapping window of `t` into an `h × w` canvas: larger
/// outputs are cropped and smaller ones zero-padded, both at a uniformly
/// random offset.
pub fn fit_to_canvas<T: Scalar>(t: Transformed<T>, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Transformed<T> {
    let (_, oh, ow) = t.output.dim();
    if (oh, ow) == (h, w) {
        return t;
    }
    let mut axis = |out: usize, want: usize| -> (usize, usize, usize) {
        if out >= want {
            (rng.random_range(0..=out - want), 0, want)
        } else {
            (0, rng.random_range(0..=want - out), out)
        }
    };
    let (sy, dy, lh) = axis(oh, h);
    let (sx, dx, lw) = axis(ow, w);
    let mut map = SampleMap::zeros((oh, ow), (h, w));
    map.resize_region(Rect::new(sy, sx, lh, lw), Rect::new(dy, dx, lh, lw));
    t.sample(map)
}

/// One basic transformation applied with probability [`BASIC_PROB`] at a
/// random intensity `s' ~ U(0, s)` and a random direction variant.
#[derive(Debug, Clone, Copy)]
pub struct BasicKind {
    pub kind: TransformKind,
    pub s: f64,
    pub p: f64,
}

impl BasicKind {
    pub fn new(kind: TransformKind, s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(invalid(format!("intensity {s} outside [0,1]")));
        }
        Ok(Self { kind, s, p: BASIC_PROB })
    }

    pub fn draw_variant<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<TransformVariant>> {
        if !(rng.random::<f64>() < self.p) {
            return Ok(None);
        }
        let s1 = rng.random::<f64>() * self.s;
        let pair = self.kind.is_two_axis().then(|| (s1, rng.random::<f64>() * self.s));
        let variants = enumerate_variants(self.kind, s1, pair)?;
        let pick = rng.random_range(0..variants.len());
        Ok(Some(variants[pick]))
    }
}

impl<T: Scalar> InputTransform<T> for BasicKind {
    fn id(&self) -> String {
        format!("basic:{}:{}", self.kind, self.s)
    }

    fn forward(&self, x: ArrayView3<T>, rng: &mut ChaCha8Rng) -> Result<Transformed<T>> {
        let (_, h, w) = x.dim();
        match self.draw_variant(rng)? {
            None => Ok(Transformed::identity(x)),
            Some(v) => Ok(fit_to_canvas(apply_differentiable(&v, x)?, h, w, rng)),
        }
    }

    fn is_deterministic(&self) -> bool {
        self.s == 0.0 || self.p == 0.0
    }
}

/// Resize-and-pad diversity: with probability `p` the image is resized to a
/// random side in `[H, ratio·H)`, zero-padded at a random offset to
/// `ratio·H`, and resized back to `H × W`.
#[derive(Debug, Clone, Copy)]
pub struct Diverse {
    pub p: f64,
    pub ratio: f64,
    pub name: &'static str,
}

impl Diverse {
    pub fn di() -> Self {
        Self { p: 0.5, ratio: 1.1, name: "di" }
    }

    pub fn rdi() -> Self {
        Self { p: 0.7, ratio: 340.0 / 299.0, name: "rdi" }
    }
}

impl<T: Scalar> InputTransform<T> for Diverse {
    fn id(&self) -> String {
        format!("{}[{},{}]", self.name, self.p, self.ratio)
    }

    fn forward(&self, x: ArrayView3<T>, rng: &mut ChaCha8Rng) -> Result<Transformed<T>> {
        let (_, h, w) = x.dim();
        if !(rng.random::<f64>() < self.p) {
            return Ok(Transformed::identity(x));
        }
        let (bh, bw) = (round_dim(self.ratio * h as f64).max(h), round_dim(self.ratio * w as f64).max(w));
        let nh = rng.random_range(h..=bh);
        let nw = ((nh as f64 / h as f64) * w as f64).round().clamp(w as f64, bw as f64) as usize;
        let (py, px) = (rng.random_range(0..=bh - nh), rng.random_range(0..=bw - nw));
        let mut pad = SampleMap::zeros((h, w), (bh, bw));
        pad.resize_region(Rect::full(h, w), Rect::new(py, px, nh, nw));
        Ok(Transformed::identity(x).sample(pad).sample(SampleMap::resize((bh, bw), h, w)))
    }
}

/// A single fixed variant, resized back to the input canvas when it
/// changes dimensions.
#[derive(Debug, Clone, Copy)]
pub struct FixedVariant(pub TransformVariant);

impl<T: Scalar> InputTransform<T> for FixedVariant {
    fn id(&self) -> String {
        format!("fixed:{}:{}:{}", self.0.kind, self.0.s, self.0.direction)
    }

    fn forward(&self, x: ArrayView3<T>, _rng: &mut ChaCha8Rng) -> Result<Transformed<T>> {
        let (_, h, w) = x.dim();
        let t = apply_differentiable(&self.0, x)?;
        let (_, oh, ow) = t.output.dim();
        Ok(if (oh, ow) == (h, w) { t } else { t.sample(SampleMap::resize((oh, ow), h, w)) })
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

fn bracket_args(rest: &str, id: &str) -> Result<Option<Vec<f64>>> {
    if rest.is_empty() {
        return Ok(None);
    }
    let inner = rest
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| invalid(format!("malformed transform id {id:?}")))?;
    inner
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| invalid(format!("bad number {v:?} in {id:?}"))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Builds a transformation from its id.
pub fn parse_transform<T: Scalar>(id: &str) -> Result<Box<dyn InputTransform<T>>> {
    let id = id.trim();
    if id == "identity" {
        return Ok(Box::new(Identity));
    }
    if let Some(rest) = id.strip_prefix("s4st") {
        let (rest, gate) = match rest.strip_suffix(":global") {
            Some(r) => (r, BlockGate::Global),
            None => (rest, BlockGate::PerBlock),
        };
        let params = match bracket_args(rest, id)? {
            None => S4STParams::default(),
            Some(v) if v.len() == 4 && v[3] >= 1.0 && v[3].fract() == 0.0 => S4STParams::new(v[0], v[1], v[2], v[3] as usize)?,
            Some(_) => return Err(invalid(format!("s4st takes [p_r,r,p_aug,m], got {id:?}"))),
        };
        return Ok(Box::new(S4ST { params, gate }));
    }
    if let Some(rest) = id.strip_prefix("basic:") {
        let (kind, s) = rest.split_once(':').ok_or_else(|| invalid(format!("expected basic:<kind>:<s>, got {id:?}")))?;
        let s: f64 = s.parse().map_err(|_| invalid(format!("bad intensity in {id:?}")))?;
        return Ok(Box::new(BasicKind::new(kind.parse()?, s)?));
    }
    for (prefix, base) in [("rdi", Diverse::rdi()), ("di", Diverse::di())] {
        if let Some(rest) = id.strip_prefix(prefix) {
            let d = match bracket_args(rest, id)? {
                None => base,
                Some(v) if v.len() == 2 && (0.0..=1.0).contains(&v[0]) && v[1] >= 1.0 => Diverse { p: v[0], ratio: v[1], ..base },
                Some(_) => return Err(invalid(format!("{prefix} takes [p,ratio] with ratio >= 1, got {id:?}"))),
            };
            return Ok(Box::new(d));
        }
    }
    Err(invalid(format!("unknown transform id {id:?}")))
}
