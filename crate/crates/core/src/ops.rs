//! Differentiable pixel operations.
//!
//! Every geometric operation (resize, pad, crop, flip, affine and perspective
//! warps) is lowered to a [`SampleMap`]: for each output pixel, four bilinear
//! taps into the source. Forward is a gather, the pullback is the transposed
//! scatter. Color operations carry their own local Jacobians. A [`Pullback`]
//! chains the recorded steps so input gradients can be recovered through any
//! composed transformation.

use nalgebra::{Matrix3, SMatrix, SVector};
use ndarray::{Array3, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::clamp01;
use crate::scalar::Scalar;

/// Luma coefficients used for grayscale conversion.
pub const GRAY: [f64; 3] = [0.2989, 0.587, 0.114];

const NO_TAP: u32 = u32::MAX;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn new(y: usize, x: usize, h: usize, w: usize) -> Self {
        Self { y, x, h, w }
    }

    pub fn full(h: usize, w: usize) -> Self {
        Self { y: 0, x: 0, h, w }
    }

    pub fn area(&self) -> usize {
        self.h * self.w
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.h && x >= self.x && x < self.x + self.w
    }
}

/// How taps falling outside the source are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    /// Out-of-frame taps contribute zero.
    Zero,
    /// Coordinates are clamped to the source rectangle.
    Clamp,
}

/// Sparse bilinear resampling operator shared by all channels.
#[derive(Debug, Clone)]
pub struct SampleMap<T> {
    src: (usize, usize),
    dst: (usize, usize),
    idx: Vec<[u32; 4]>,
    wts: Vec<[T; 4]>,
}

impl<T: Scalar> SampleMap<T> {
    /// Map whose every output pixel is zero.
    pub fn zeros(src: (usize, usize), dst: (usize, usize)) -> Self {
        let n = dst.0 * dst.1;
        Self { src, dst, idx: vec![[NO_TAP; 4]; n], wts: vec![[T::zero(); 4]; n] }
    }

    pub fn identity(h: usize, w: usize) -> Self {
        let mut map = Self::zeros((h, w), (h, w));
        for (i, (idx, wts)) in map.idx.iter_mut().zip(map.wts.iter_mut()).enumerate() {
            *idx = [i as u32, NO_TAP, NO_TAP, NO_TAP];
            *wts = [T::one(), T::zero(), T::zero(), T::zero()];
        }
        map
    }

    pub fn src_dims(&self) -> (usize, usize) {
        self.src
    }

    pub fn dst_dims(&self) -> (usize, usize) {
        self.dst
    }

    /// Sets output pixel `(y, x)` to a bilinear sample at continuous source
    /// position `(sy, sx)` (pixel centers at integer coordinates), restricted
    /// to `window`.
    fn set_tap(&mut self, y: usize, x: usize, sy: f64, sx: f64, window: Rect, edge: Edge) {
        let (sy, sx) = match edge {
            Edge::Clamp => (
                sy.clamp(0.0, (window.h - 1) as f64),
                sx.clamp(0.0, (window.w - 1) as f64),
            ),
            Edge::Zero => (sy, sx),
        };
        let y0 = sy.floor();
        let x0 = sx.floor();
        let fy = sy - y0;
        let fx = sx - x0;
        let y0 = y0 as i64;
        let x0 = x0 as i64;
        let o = y * self.dst.1 + x;
        let mut idx = [NO_TAP; 4];
        let mut wts = [T::zero(); 4];
        let taps = [
            (y0, x0, (1.0 - fy) * (1.0 - fx)),
            (y0, x0 + 1, (1.0 - fy) * fx),
            (y0 + 1, x0, fy * (1.0 - fx)),
            (y0 + 1, x0 + 1, fy * fx),
        ];
        for (k, &(ty, tx, wt)) in taps.iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            if ty < 0 || tx < 0 || ty >= window.h as i64 || tx >= window.w as i64 {
                // Only reachable in Zero mode: Clamp keeps nonzero taps inside.
                continue;
            }
            let gy = window.y + ty as usize;
            let gx = window.x + tx as usize;
            idx[k] = (gy * self.src.1 + gx) as u32;
            wts[k] = T::of(wt);
        }
        self.idx[o] = idx;
        self.wts[o] = wts;
    }

    /// Fills `dst_rect` with a half-pixel-centered bilinear resize of
    /// `src_rect` (edge-clamped inside `src_rect`).
    pub fn resize_region(&mut self, src_rect: Rect, dst_rect: Rect) {
        let sy_scale = src_rect.h as f64 / dst_rect.h as f64;
        let sx_scale = src_rect.w as f64 / dst_rect.w as f64;
        for dy in 0..dst_rect.h {
            let sy = (dy as f64 + 0.5) * sy_scale - 0.5;
            for dx in 0..dst_rect.w {
                let sx = (dx as f64 + 0.5) * sx_scale - 0.5;
                self.set_tap(dst_rect.y + dy, dst_rect.x + dx, sy, sx, src_rect, Edge::Clamp);
            }
        }
    }

    /// Bilinear resize of the whole source to `(h, w)`.
    pub fn resize(src: (usize, usize), h: usize, w: usize) -> Self {
        let mut map = Self::zeros(src, (h, w));
        map.resize_region(Rect::full(src.0, src.1), Rect::full(h, w));
        map
    }

    /// Output pixel `(y, x)` samples source position `inverse(y, x)`;
    /// out-of-frame taps are zero.
    pub fn warp(src: (usize, usize), dst: (usize, usize), inverse: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut map = Self::zeros(src, dst);
        let window = Rect::full(src.0, src.1);
        for y in 0..dst.0 {
            for x in 0..dst.1 {
                let (sy, sx) = inverse(y as f64, x as f64);
                if sy.is_finite() && sx.is_finite() {
                    map.set_tap(y, x, sy, sx, window, Edge::Zero);
                }
            }
        }
        map
    }

    pub fn apply(&self, src: ArrayView3<T>) -> Array3<T> {
        let (c, h, w) = src.dim();
        assert_eq!((h, w), self.src, "sample map source dims");
        let (dh, dw) = self.dst;
        let mut out = Array3::zeros((c, dh, dw));
        for ch in 0..c {
            let plane = src.index_axis(ndarray::Axis(0), ch);
            let plane = plane.as_standard_layout();
            let flat = plane.as_slice().expect("standard layout");
            let mut dst = out.index_axis_mut(ndarray::Axis(0), ch);
            let dst = dst.as_slice_mut().expect("fresh array is contiguous");
            for (o, (idx, wts)) in dst.iter_mut().zip(self.idx.iter().zip(self.wts.iter())) {
                let mut acc = T::zero();
                for k in 0..4 {
                    if idx[k] != NO_TAP {
                        acc += wts[k] * flat[idx[k] as usize];
                    }
                }
                *o = acc;
            }
        }
        out
    }

    /// Transposed application: scatters output gradients back to the source.
    pub fn pullback(&self, grad: ArrayView3<T>) -> Array3<T> {
        let (c, h, w) = grad.dim();
        assert_eq!((h, w), self.dst, "sample map destination dims");
        let mut out = Array3::zeros((c, self.src.0, self.src.1));
        for ch in 0..c {
            let plane = grad.index_axis(ndarray::Axis(0), ch);
            let plane = plane.as_standard_layout();
            let g = plane.as_slice().expect("standard layout");
            let mut dst = out.index_axis_mut(ndarray::Axis(0), ch);
            let dst = dst.as_slice_mut().expect("fresh array is contiguous");
            for (gv, (idx, wts)) in g.iter().zip(self.idx.iter().zip(self.wts.iter())) {
                for k in 0..4 {
                    if idx[k] != NO_TAP {
                        dst[idx[k] as usize] += wts[k] * *gv;
                    }
                }
            }
        }
        out
    }
}

/// Affine warp about the image center: `inverse` is the 2×2 matrix mapping
/// output offsets `(dx, dy)` to source offsets, `shift` a source-space
/// translation in pixels `(dx, dy)`.
pub fn affine_map<T: Scalar>(h: usize, w: usize, inverse: [[f64; 2]; 2], shift: (f64, f64)) -> SampleMap<T> {
    if inverse == [[1.0, 0.0], [0.0, 1.0]] && shift == (0.0, 0.0) {
        return SampleMap::identity(h, w);
    }
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    SampleMap::warp((h, w), (h, w), |y, x| {
        let dx = x - cx - shift.0;
        let dy = y - cy - shift.1;
        let sx = inverse[0][0] * dx + inverse[0][1] * dy + cx;
        let sy = inverse[1][0] * dx + inverse[1][1] * dy + cy;
        (sy, sx)
    })
}

/// Homography taking each `from[i]` to `to[i]`, points given as `(x, y)`.
pub fn homography(from: [(f64, f64); 4], to: [(f64, f64); 4]) -> Result<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = from[i];
        let (u, v) = to[i];
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let sol = a.lu().solve(&b).ok_or_else(|| invalid("degenerate perspective quadrilateral"))?;
    Ok(Matrix3::new(sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0))
}

/// Perspective warp whose content at `start` corners moves to `end` corners.
pub fn perspective_map<T: Scalar>(h: usize, w: usize, start: [(f64, f64); 4], end: [(f64, f64); 4]) -> Result<SampleMap<T>> {
    if start == end {
        return Ok(SampleMap::identity(h, w));
    }
    let inv = homography(end, start)?;
    Ok(SampleMap::warp((h, w), (h, w), |y, x| {
        let d = inv[(2, 0)] * x + inv[(2, 1)] * y + inv[(2, 2)];
        let sx = (inv[(0, 0)] * x + inv[(0, 1)] * y + inv[(0, 2)]) / d;
        let sy = (inv[(1, 0)] * x + inv[(1, 1)] * y + inv[(1, 2)]) / d;
        (sy, sx)
    }))
}

pub fn flip_map<T: Scalar>(h: usize, w: usize, vertical: bool) -> SampleMap<T> {
    let mut map = SampleMap::zeros((h, w), (h, w));
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = if vertical { (h - 1 - y, x) } else { (y, w - 1 - x) };
            let o = y * w + x;
            map.idx[o] = [(sy * w + sx) as u32, NO_TAP, NO_TAP, NO_TAP];
            map.wts[o] = [T::one(), T::zero(), T::zero(), T::zero()];
        }
    }
    map
}

/// Pixel-wise photometric operations with their torchvision semantics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorOp {
    Brightness(f64),
    Contrast(f64),
    Saturation(f64),
    /// Hue shift in turns, `[-0.5, 0.5]`.
    Hue(f64),
    /// Pixels `>= threshold` are inverted.
    Solarize(f64),
}

/// Local Jacobian data recorded by a color operation's forward pass.
#[derive(Debug, Clone)]
pub enum ColorJacobian<T> {
    /// `dx = factor * mask * dy` (+ luma coupling for contrast/saturation).
    Blend { op: ColorOp, pass: Array3<bool> },
    /// Per-pixel 3×3 Jacobian rows `out_c = Σ_k J[c][k] in_k`.
    Hue { jac: Vec<[[T; 3]; 3]>, dims: (usize, usize) },
    Solarize { inverted: Array3<bool> },
    Identity,
}

fn gray_at<T: Scalar>(x: &ArrayView3<T>, y: usize, xx: usize) -> T {
    T::of(GRAY[0]) * x[[0, y, xx]] + T::of(GRAY[1]) * x[[1, y, xx]] + T::of(GRAY[2]) * x[[2, y, xx]]
}

impl ColorOp {
    pub fn is_identity(&self) -> bool {
        match *self {
            ColorOp::Brightness(f) | ColorOp::Contrast(f) | ColorOp::Saturation(f) => f == 1.0,
            ColorOp::Hue(f) => f == 0.0,
            ColorOp::Solarize(_) => false,
        }
    }

    pub fn forward<T: Scalar>(&self, x: ArrayView3<T>) -> (Array3<T>, ColorJacobian<T>) {
        if self.is_identity() {
            return (x.to_owned(), ColorJacobian::Identity);
        }
        let (_, h, w) = x.dim();
        match *self {
            ColorOp::Brightness(f) => blend(x, f, |_, _, _| T::zero(), *self),
            ColorOp::Contrast(f) => {
                let mut mean = T::zero();
                for y in 0..h {
                    for xx in 0..w {
                        mean += gray_at(&x, y, xx);
                    }
                }
                mean /= T::of((h * w) as f64);
                blend(x, f, move |_, _, _| mean, *self)
            }
            ColorOp::Saturation(f) => {
                let xv = x;
                blend(x, f, move |_, y, xx| gray_at(&xv, y, xx), *self)
            }
            ColorOp::Hue(shift) => hue_forward(x, shift),
            ColorOp::Solarize(threshold) => {
                let thr = T::of(threshold);
                let inverted = x.mapv(|v| v >= thr);
                let out = Zip::from(&x).and(&inverted).map_collect(|&v, &inv| if inv { T::one() - v } else { v });
                (out, ColorJacobian::Solarize { inverted })
            }
        }
    }
}

/// `clamp(f * x + (1 - f) * other(c, y, x))`.
fn blend<T: Scalar>(
    x: ArrayView3<T>,
    factor: f64,
    other: impl Fn(usize, usize, usize) -> T,
    op: ColorOp,
) -> (Array3<T>, ColorJacobian<T>) {
    let f = T::of(factor);
    let g = T::one() - f;
    let mut pass = Array3::from_elem(x.dim(), false);
    let mut out = Array3::zeros(x.dim());
    for ((c, y, xx), v) in x.indexed_iter() {
        let raw = f * *v + g * other(c, y, xx);
        pass[[c, y, xx]] = raw >= T::zero() && raw <= T::one();
        out[[c, y, xx]] = clamp01(raw);
    }
    (out, ColorJacobian::Blend { op, pass })
}

fn hue_forward<T: Scalar>(x: ArrayView3<T>, shift: f64) -> (Array3<T>, ColorJacobian<T>) {
    let (_, h, w) = x.dim();
    let mut out = Array3::zeros((3, h, w));
    let mut jac = Vec::with_capacity(h * w);
    let eye = [[T::one(), T::zero(), T::zero()], [T::zero(), T::one(), T::zero()], [T::zero(), T::zero(), T::one()]];
    for y in 0..h {
        for xx in 0..w {
            let rgb = [x[[0, y, xx]].f64(), x[[1, y, xx]].f64(), x[[2, y, xx]].f64()];
            let (o, j) = hue_pixel(rgb, shift);
            match j {
                Some(j) => {
                    for c in 0..3 {
                        out[[c, y, xx]] = clamp01(T::of(o[c]));
                    }
                    jac.push(j.map(|r| r.map(T::of)));
                }
                None => {
                    for c in 0..3 {
                        out[[c, y, xx]] = x[[c, y, xx]];
                    }
                    jac.push(eye);
                }
            }
        }
    }
    (out, ColorJacobian::Hue { jac, dims: (h, w) })
}

/// Shifts the hue of one RGB pixel by `shift` turns via HSV. Returns the
/// result and its local (piecewise constant) Jacobian, or `None` for gray
/// pixels whose hue is undefined and which are left unchanged.
pub(crate) fn hue_pixel(rgb: [f64; 3], shift: f64) -> ([f64; 3], Option<[[f64; 3]; 3]>) {
    let (imax, imin) = {
        let mut imax = 0;
        let mut imin = 0;
        for c in 1..3 {
            if rgb[c] > rgb[imax] {
                imax = c;
            }
            if rgb[c] < rgb[imin] {
                imin = c;
            }
        }
        (imax, imin)
    };
    let v = rgb[imax];
    let mn = rgb[imin];
    let chroma = v - mn;
    if chroma <= 0.0 {
        return (rgb, None);
    }
    let e = |c: usize| {
        let mut u = [0.0; 3];
        u[c] = 1.0;
        u
    };
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let add = |a: [f64; 3], b: [f64; 3]| [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
    let scale = |a: [f64; 3], k: f64| [a[0] * k, a[1] * k, a[2] * k];
    // chroma * h6 as a linear form in the input, and its value.
    let (num, base) = match imax {
        0 => (sub(e(1), e(2)), 0.0),
        1 => (sub(e(2), e(0)), 2.0),
        _ => (sub(e(0), e(1)), 4.0),
    };
    let num_val = num[0] * rgb[0] + num[1] * rgb[1] + num[2] * rgb[2];
    let h6 = num_val / chroma + base;
    let shifted = (h6 + 6.0 * shift).rem_euclid(6.0);
    let sector = (shifted.floor() as usize).min(5);
    let frac = shifted - sector as f64;
    // chroma * frac = chroma * h6 + chroma * (frac - h6), linear locally.
    let c_vec = sub(e(imax), e(imin));
    let cf_vec = add(add(num, scale(c_vec, base)), scale(c_vec, frac - h6));
    let cf = chroma * frac;
    let v_vec = e(imax);
    let p_vec = e(imin);
    let q_vec = sub(v_vec, cf_vec);
    let t_vec = add(p_vec, cf_vec);
    let (p, q, t) = (mn, v - cf, mn + cf);
    let (vals, rows) = match sector {
        0 => ([v, t, p], [v_vec, t_vec, p_vec]),
        1 => ([q, v, p], [q_vec, v_vec, p_vec]),
        2 => ([p, v, t], [p_vec, v_vec, t_vec]),
        3 => ([p, q, v], [p_vec, q_vec, v_vec]),
        4 => ([t, p, v], [t_vec, p_vec, v_vec]),
        _ => ([v, p, q], [v_vec, p_vec, q_vec]),
    };
    (vals, Some(rows))
}

impl<T: Scalar> ColorJacobian<T> {
    pub fn pullback(&self, grad: ArrayView3<T>) -> Array3<T> {
        match self {
            ColorJacobian::Identity => grad.to_owned(),
            ColorJacobian::Solarize { inverted } => {
                Zip::from(&grad).and(inverted).map_collect(|&g, &inv| if inv { -g } else { g })
            }
            ColorJacobian::Hue { jac, dims } => {
                let (h, w) = *dims;
                let mut out = Array3::zeros((3, h, w));
                for y in 0..h {
                    for x in 0..w {
                        let j = &jac[y * w + x];
                        for k in 0..3 {
                            let mut acc = T::zero();
                            for c in 0..3 {
                                acc += j[c][k] * grad[[c, y, x]];
                            }
                            out[[k, y, x]] = acc;
                        }
                    }
                }
                out
            }
            ColorJacobian::Blend { op, pass } => {
                let (factor, coupling) = match *op {
                    ColorOp::Brightness(f) => (f, Coupling::None),
                    ColorOp::Contrast(f) => (f, Coupling::Global),
                    ColorOp::Saturation(f) => (f, Coupling::PerPixel),
                    _ => unreachable!("blend jacobian only records blend ops"),
                };
                let f = T::of(factor);
                let g = T::one() - f;
                let masked = Zip::from(&grad).and(pass).map_collect(|&v, &p| if p { v } else { T::zero() });
                let mut out = masked.mapv(|v| v * f);
                let (_, h, w) = masked.dim();
                match coupling {
                    Coupling::None => {}
                    Coupling::Global => {
                        let total: T = masked.iter().copied().sum();
                        let share = g * total / T::of((h * w) as f64);
                        for c in 0..3 {
                            let k = share * T::of(GRAY[c]);
                            out.index_axis_mut(ndarray::Axis(0), c).mapv_inplace(|v| v + k);
                        }
                    }
                    Coupling::PerPixel => {
                        for y in 0..h {
                            for x in 0..w {
                                let s = masked[[0, y, x]] + masked[[1, y, x]] + masked[[2, y, x]];
                                for c in 0..3 {
                                    out[[c, y, x]] += g * T::of(GRAY[c]) * s;
                                }
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

enum Coupling {
    None,
    Global,
    PerPixel,
}

/// One recorded step of a differentiable transformation.
#[derive(Debug, Clone)]
pub enum Step<T> {
    Sample(SampleMap<T>),
    Color(ColorJacobian<T>),
}

/// Reverse-mode record of a chain of pixel operations.
#[derive(Debug, Clone)]
pub struct Pullback<T> {
    input_dims: (usize, usize),
    steps: Vec<Step<T>>,
}

impl<T: Scalar> Pullback<T> {
    pub fn identity(input_dims: (usize, usize)) -> Self {
        Self { input_dims, steps: Vec::new() }
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }

    pub fn push(&mut self, step: Step<T>) {
        self.steps.push(step);
    }

    /// Maps a gradient w.r.t. the transformed output to the input.
    pub fn backward(&self, grad: Array3<T>) -> Array3<T> {
        self.steps.iter().rev().fold(grad, |g, step| match step {
            Step::Sample(map) => map.pullback(g.view()),
            Step::Color(jac) => jac.pullback(g.view()),
        })
    }
}

/// Output of a differentiable transformation.
#[derive(Debug, Clone)]
pub struct Transformed<T> {
    pub output: Array3<T>,
    pub pullback: Pullback<T>,
}

impl<T: Scalar> Transformed<T> {
    pub fn identity(x: ArrayView3<T>) -> Self {
        let (_, h, w) = x.dim();
        Self { output: x.to_owned(), pullback: Pullback::identity((h, w)) }
    }

    pub fn sample(self, map: SampleMap<T>) -> Self {
        let output = map.apply(self.output.view());
        let mut pullback = self.pullback;
        pullback.push(Step::Sample(map));
        Self { output, pullback }
    }

    pub fn color(self, op: ColorOp) -> Self {
        if op.is_identity() {
            return self;
        }
        let (output, jac) = op.forward(self.output.view());
        let mut pullback = self.pullback;
        pullback.push(Step::Color(jac));
        Self { output, pullback }
    }
}
