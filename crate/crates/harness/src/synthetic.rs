//! Procedural ten-class texture corpus used by the desk rig.
//!
//! Every image holds one elliptical patch filled with a class-specific
//! periodic pattern in two random colors, over a drifting background with a
//! few distractor squares. Pattern period, phase, patch placement and colors
//! are random; only the pattern family identifies the class. All families
//! are invariant under horizontal flips.

use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use s4st_core::RngState;

pub const TEXTURE_CLASSES: [&str; 10] =
    ["h-stripes", "v-stripes", "checker", "dots", "grid", "x-hatch", "rings", "waves", "spokes", "diamonds"];

const MIN_CONTRAST: f64 = 0.12;
const NOISE: f64 = 0.01;
const DISTRACTORS: usize = 3;

/// Whether pattern `class` is "on" at offset `(u, v)` (pixels) from the
/// patch center, for period `p` and phase `(a, b)` in `[0, 1)`.
fn pattern(class: usize, u: f64, v: f64, p: f64, (a, b): (f64, f64)) -> bool {
    let frac = |t: f64| t - t.floor();
    let fu = frac(u / p + a);
    let fv = frac(v / p + b);
    match class {
        0 => fv < 0.5,
        1 => fu < 0.5,
        2 => (fu < 0.5) == (fv < 0.5),
        3 => (fu - 0.5).powi(2) + (fv - 0.5).powi(2) < 0.09,
        4 => fu < 0.3 || fv < 0.3,
        5 => {
            let d1 = frac((u + v) / (p * std::f64::consts::SQRT_2) + a);
            let d2 = frac((u - v) / (p * std::f64::consts::SQRT_2) + a);
            d1 < 0.3 || d2 < 0.3
        }
        6 => frac((u * u + v * v).sqrt() / p + a) < 0.5,
        7 => frac(v / p + 0.25 * (std::f64::consts::TAU * u / (2.0 * p)).sin() + b) < 0.5,
        8 => {
            let spokes = 8.0;
            frac(v.atan2(u.abs()) / std::f64::consts::PI * spokes + a) < 0.5
        }
        _ => {
            let d1 = frac((u + v) / (p * std::f64::consts::SQRT_2) + a);
            let d2 = frac((u - v) / (p * std::f64::consts::SQRT_2) + a);
            (d1 < 0.5) == (d2 < 0.5)
        }
    }
}

fn luminance(c: &[f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn contrasting(rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3]) {
    loop {
        let a = [rng.random(), rng.random(), rng.random()];
        let b = [rng.random(), rng.random(), rng.random()];
        if (luminance(&a) - luminance(&b)).abs() >= MIN_CONTRAST {
            return (a, b);
        }
    }
}

/// Renders one sample of `class` at `size × size`.
pub fn render(class: usize, size: usize, rng: &mut ChaCha8Rng) -> Array3<f32> {
    let s = size as f64;
    let cy = s * rng.random_range(0.4..0.6);
    let cx = s * rng.random_range(0.4..0.6);
    let ry = s * rng.random_range(0.28..0.45);
    let rx = s * rng.random_range(0.28..0.45);
    let period = s * rng.random_range(0.12..0.2);
    let phase = (rng.random::<f64>(), rng.random::<f64>());
    let (on, off) = contrasting(rng);
    let bg: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let bg2: [f64; 3] = std::array::from_fn(|c| (bg[c] + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0));
    let (gy, gx): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut out = Array3::zeros((3, size, size));
    for y in 0..size {
        for x in 0..size {
            let t = (0.5 + 0.5 * (gy * (y as f64 / s - 0.5) + gx * (x as f64 / s - 0.5))).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let v = y as f64 + oy - cy;
                let u = x as f64 + ox - cx;
                let color = if (v / ry).powi(2) + (u / rx).powi(2) > 1.0 {
                    std::array::from_fn(|c| bg[c] * (1.0 - t) + bg2[c] * t)
                } else if pattern(class, u, v, period, phase) {
                    on
                } else {
                    off
                };
                for c in 0..3 {
                    px[c] += 0.25 * color[c];
                }
            }
            for c in 0..3 {
                out[[c, y, x]] = px[c] as f32;
            }
        }
    }
    for _ in 0..DISTRACTORS {
        let side = rng.random_range(2..=(size / 8).max(2));
        let (py, px) = (rng.random_range(0..=size - side), rng.random_range(0..=size - side));
        let color: [f32; 3] = [rng.random(), rng.random(), rng.random()];
        for c in 0..3 {
            out.slice_mut(ndarray::s![c, py..py + side, px..px + side]).fill(color[c]);
        }
    }
    out.mapv_inplace(|v| (v as f64 + NOISE * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0) as f32);
    out
}

/// Balanced labelled batch: sample `i` has class `i % classes`.
pub fn corpus(count: usize, classes: usize, size: usize, stream: &RngState) -> (Array4<f32>, Vec<usize>) {
    assert!(classes <= TEXTURE_CLASSES.len(), "at most {} texture classes", TEXTURE_CLASSES.len());
    let mut images = Array4::zeros((count, 3, size, size));
    let mut labels = Vec::with_capacity(count);
    for (i, mut slot) in images.axis_iter_mut(Axis(0)).enumerate() {
        let class = i % classes;
        let mut rng = stream.derive(i as u64).generator();
        slot.assign(&render(class, size, &mut rng));
        labels.push(class);
    }
    (images, labels)
}

/// Target labels distinct from `labels`, drawn uniformly among the others.
pub fn random_targets(labels: &[usize], classes: usize, stream: &RngState) -> Vec<usize> {
    let mut rng = stream.generator();
    labels
        .iter()
        .map(|&y| {
            let t = rng.random_range(0..classes - 1);
            if t >= y {
                t + 1
            } else {
                t
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_in_range() {
        let (a, la) = corpus(12, 10, 32, &RngState::new(3));
        let (b, lb) = corpus(12, 10, 32, &RngState::new(3));
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(la[11], 1);
    }

    #[test]
    fn every_class_draws_some_foreground() {
        for class in 0..10 {
            let mut rng = RngState::new(class as u64).generator();
            let img = render(class, 32, &mut rng);
            let mean = img.mean().unwrap();
            let spread = img.iter().fold(0.0f32, |m, v| m.max((v - mean).abs()));
            assert!(spread > 0.1, "class {class} looks blank");
        }
    }

    #[test]
    fn targets_never_equal_labels() {
        let labels: Vec<usize> = (0..200).map(|i| i % 10).collect();
        let targets = random_targets(&labels, 10, &RngState::new(9));
        assert!(labels.iter().zip(&targets).all(|(y, t)| y != t && *t < 10));
    }
}
