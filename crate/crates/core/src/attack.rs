//! Targeted momentum-iterative attack with translation-invariant smoothing.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array2, Array3, Array4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Network;
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::transform::InputTransform;

/// Images per forward/backward chunk inside the attack loop.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Logit,
    #[default]
    MarginCe,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::CrossEntropy, LossKind::Logit, LossKind::MarginCe];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Logit => "logit",
            LossKind::MarginCe => "margin_ce",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown loss {s:?}")))
    }
}

fn check_target<T>(logits: &[T], target: usize) -> Result<()> {
    if logits.len() < 2 {
        return Err(invalid("need at least two logits"));
    }
    if target >= logits.len() {
        return Err(invalid(format!("target {target} out of range for {} classes", logits.len())));
    }
    Ok(())
}

/// Attack loss (lower is stronger) and its gradient w.r.t. the logits.
pub fn loss_with_grad<T: Scalar>(logits: &[T], target: usize, kind: LossKind) -> Result<(T, Vec<T>)> {
    check_target(logits, target)?;
    match kind {
        LossKind::Logit => {
            let mut g = vec![T::zero(); logits.len()];
            g[target] = -T::one();
            Ok((-logits[target], g))
        }
        LossKind::CrossEntropy | LossKind::MarginCe => {
            let shift = match kind {
                LossKind::MarginCe => logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b)),
                _ => T::zero(),
            };
            let z: Vec<T> = logits.iter().map(|&v| v - shift).collect();
            let m = z.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let sum: T = z.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            let mut g: Vec<T> = z.iter().map(|&v| (v - lse).exp()).collect();
            g[target] -= T::one();
            Ok((lse - z[target], g))
        }
    }
}

pub fn loss_value<T: Scalar>(logits: &[T], target: usize, kind: LossKind) -> Result<T> {
    Ok(loss_with_grad(logits, target, kind)?.0)
}

/// Normalized `size × size` Gaussian, row-major.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    let k1 = gaussian_1d(size, sigma)?;
    Ok(k1.iter().flat_map(|a| k1.iter().map(move |b| a * b)).collect())
}

fn gaussian_1d(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(invalid(format!("kernel size {size} must be odd")));
    }
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma {sigma} must be positive")));
    }
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Depthwise same-padded Gaussian smoothing of an `N × C × H × W` field.
pub fn ti_smooth<T: Scalar>(grad: &Array4<T>, kernel_size: usize, sigma: f64) -> Result<Array4<T>> {
    let k: Vec<T> = gaussian_1d(kernel_size, sigma)?.into_iter().map(T::of).collect();
    if kernel_size == 1 {
        return Ok(grad.clone());
    }
    let r = (kernel_size / 2) as isize;
    let (n, c, h, w) = grad.dim();
    let mut tmp = Array4::zeros((n, c, h, w));
    let mut out = Array4::zeros((n, c, h, w));
    // Rows then columns; the 2-D kernel is the outer product.
    for i in 0..n {
        for ch in 0..c {
            let src = grad.slice(s![i, ch, .., ..]);
            let mut mid = tmp.slice_mut(s![i, ch, .., ..]);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = T::zero();
                    for (j, &kv) in k.iter().enumerate() {
                        let xx = x as isize + j as isize - r;
                        if xx >= 0 && xx < w as isize {
                            acc += kv * src[[y, xx as usize]];
                        }
                    }
                    mid[[y, x]] = acc;
                }
            }
            let mid = tmp.slice(s![i, ch, .., ..]);
            let mut dst = out.slice_mut(s![i, ch, .., ..]);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = T::zero();
                    for (j, &kv) in k.iter().enumerate() {
                        let yy = y as isize + j as isize - r;
                        if yy >= 0 && yy < h as isize {
                            acc += kv * mid[[yy as usize, x]];
                        }
                    }
                    dst[[y, x]] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Clamps `x_adv` into `[x - ε, x + ε] ∩ [0, 1]` elementwise.
pub fn project_linf<T: Scalar>(x_adv: &Array4<T>, x: &Array4<T>, epsilon: T) -> Result<Array4<T>> {
    if x_adv.dim() != x.dim() {
        return Err(invalid(format!("shape mismatch: {:?} vs {:?}", x_adv.dim(), x.dim())));
    }
    let mut out = x_adv.clone();
    Zip::from(&mut out).and(x).for_each(|a, &b| {
        *a = a.max(b - epsilon).min(b + epsilon).max(T::zero()).min(T::one());
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub mu: f64,
    #[serde(rename = "T")]
    pub iterations: usize,
    pub kernel_size: usize,
    pub sigma: f64,
    pub loss: LossKind,
    pub transform_id: String,
    pub copies: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 16.0 / 255.0,
            alpha: 2.0 / 255.0,
            mu: 1.0,
            iterations: 900,
            kernel_size: 5,
            sigma: 1.5,
            loss: LossKind::MarginCe,
            transform_id: "s4st".into(),
            copies: 1,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// `ε = 0` is accepted as the zero-budget case, in which `α` is unused.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(format!("epsilon {} outside [0,1]", self.epsilon)));
        }
        if !(self.alpha > 0.0) || (self.epsilon > 0.0 && self.alpha > self.epsilon) {
            return Err(invalid(format!("alpha {} must lie in (0, epsilon]", self.alpha)));
        }
        if !self.mu.is_finite() || self.mu < 0.0 {
            return Err(invalid(format!("mu {} must be finite and non-negative", self.mu)));
        }
        if self.iterations == 0 {
            return Err(invalid("T must be at least 1"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(invalid(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if !(self.sigma > 0.0) {
            return Err(invalid("sigma must be positive"));
        }
        if self.copies == 0 {
            return Err(invalid("copies must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult<T> {
    pub x_adv: Array4<T>,
    /// Mean per-image ℓ2 norm of the raw loss gradient at each iteration.
    pub grad_norm_trace: Vec<f64>,
    /// Mean loss at each iteration.
    pub loss_trace: Vec<f64>,
    pub elapsed_seconds: f64,
}

/// Per-row losses and the input gradient of their sum. With several
/// models the loss is taken on the mean of their logits.
pub fn loss_and_input_grad<T: Scalar>(models: &[&Network<T>], x: &Array4<T>, targets: &[usize], kind: LossKind) -> Result<(Vec<f64>, Array4<T>)> {
    if models.is_empty() {
        return Err(invalid("at least one model is required"));
    }
    let n = x.dim().0;
    if targets.len() != n {
        return Err(invalid(format!("{} targets for {n} images", targets.len())));
    }
    let tapes = models.iter().map(|m| m.forward_tape(x)).collect::<Result<Vec<_>>>()?;
    let classes = models[0].classes;
    if models.iter().any(|m| m.classes != classes) {
        return Err(invalid("ensemble members disagree on the class count"));
    }
    let scale = T::one() / T::of(models.len() as f64);
    let mut mean = Array2::<T>::zeros((n, classes));
    for t in &tapes {
        mean.scaled_add(scale, t.logits());
    }
    let mut dlogits = Array2::<T>::zeros((n, classes));
    let mut losses = Vec::with_capacity(n);
    for (i, row) in mean.axis_iter(Axis(0)).enumerate() {
        let (l, g) = loss_with_grad(row.as_slice().expect("row"), targets[i], kind)?;
        losses.push(l.f64());
        for (j, v) in g.into_iter().enumerate() {
            dlogits[[i, j]] = v * scale;
        }
    }
    let mut grad = Array4::zeros(x.dim());
    for (m, t) in models.iter().zip(&tapes) {
        grad += &m.backward_input(t, &dlogits)?;
    }
    Ok((losses, grad))
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Runs the attack and reports nothing per step.
pub fn tmi_attack<T: Scalar>(
    models: &[&Network<T>],
    x: &Array4<T>,
    targets: &[usize],
    config: &AttackConfig,
    transform: &dyn InputTransform<T>,
) -> Result<AttackResult<T>> {
    tmi_attack_observed(models, x, targets, config, transform, &mut |_, _| {})
}

/// Runs the attack, calling `observer(t, x_adv)` after every iteration
/// (`t` is 1-based).
pub fn tmi_attack_observed<T: Scalar>(
    models: &[&Network<T>],
    x: &Array4<T>,
    targets: &[usize],
    config: &AttackConfig,
    transform: &dyn InputTransform<T>,
    observer: &mut dyn FnMut(usize, &Array4<T>),
) -> Result<AttackResult<T>> {
    config.validate()?;
    let start = Instant::now();
    let (n, c, h, w) = x.dim();
    if c != 3 {
        return Err(invalid(format!("expected 3 channels, got {c}")));
    }
    if targets.len() != n {
        return Err(invalid(format!("{} targets for {n} images", targets.len())));
    }
    if x.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
        return Err(invalid("input pixels must lie in [0,1]"));
    }
    let eps = T::of(config.epsilon);
    let alpha = T::of(config.alpha);
    let mu = T::of(config.mu);
    let copies = if transform.is_deterministic() { 1 } else { config.copies };
    let root = RngState::new(config.seed);

    let mut x_adv = x.clone();
    let mut momentum = Array4::<T>::zeros(x.dim());
    let mut grad_norm_trace = Vec::with_capacity(config.iterations);
    let mut loss_trace = Vec::with_capacity(config.iterations);

    for t in 0..config.iterations {
        let mut grad = Array4::<T>::zeros(x.dim());
        let mut loss_sum = 0.0;
        for copy in 0..copies {
            for lo in (0..n).step_by(CHUNK) {
                let hi = (lo + CHUNK).min(n);
                let mut batch = Array4::zeros((hi - lo, 3, h, w));
                let mut pullbacks = Vec::with_capacity(hi - lo);
                for i in lo..hi {
                    let mut rng = root.derive_all(&[i as u64, t as u64, copy as u64]).generator();
                    let tr = transform.forward(x_adv.index_axis(Axis(0), i), &mut rng)?;
                    if tr.output.dim() != (3, h, w) {
                        return Err(invalid(format!(
                            "transform {} produced {:?} for a {h}x{w} input",
                            transform.id(),
                            tr.output.dim()
                        )));
                    }
                    batch.index_axis_mut(Axis(0), i - lo).assign(&tr.output);
                    pullbacks.push(tr.pullback);
                }
                let (losses, g) = loss_and_input_grad(models, &batch, &targets[lo..hi], config.loss)?;
                loss_sum += losses.iter().sum::<f64>();
                for (k, pb) in pullbacks.iter().enumerate() {
                    let back: Array3<T> = pb.backward(g.index_axis(Axis(0), k).to_owned());
                    grad.index_axis_mut(Axis(0), lo + k).scaled_add(T::one(), &back);
                }
            }
        }
        if copies > 1 {
            grad.mapv_inplace(|v| v / T::of(copies as f64));
        }
        if let Some((idx, v)) = grad.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                iteration: t + 1,
                detail: format!("value {v} at image {} channel {} pixel ({}, {})", idx.0, idx.1, idx.2, idx.3),
            });
        }
        let norms: f64 = grad.axis_iter(Axis(0)).map(|g| g.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()).sum();
        grad_norm_trace.push(norms / n as f64);
        loss_trace.push(loss_sum / (n * copies) as f64);

        let smoothed = ti_smooth(&grad, config.kernel_size, config.sigma)?;
        for (mut m, g) in momentum.axis_iter_mut(Axis(0)).zip(smoothed.axis_iter(Axis(0))) {
            let l1: T = g.iter().map(|v| v.abs()).sum();
            let inv = if l1 > T::zero() { T::one() / l1 } else { T::zero() };
            Zip::from(&mut m).and(&g).for_each(|m, &g| *m = mu * *m + g * inv);
        }
        Zip::from(&mut x_adv).and(&momentum).for_each(|a, &m| *a -= alpha * sign(m));
        x_adv = project_linf(&x_adv, x, eps)?;
        observer(t + 1, &x_adv);
    }
    Ok(AttackResult { x_adv, grad_norm_trace, loss_trace, elapsed_seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv2d, Layer, Linear};
    use crate::transform::{parse_transform, Identity};
    use approx::assert_abs_diff_eq;

    #[test]
    fn loss_examples() {
        assert_abs_diff_eq!(loss_value(&[0.0f64, 0.0], 0, LossKind::CrossEntropy).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert_eq!(loss_value(&[3.2f64, -1.0, 0.4], 0, LossKind::Logit).unwrap(), -3.2);
        let hand = 4.0 + (1.0 + 2.0 * (-4.0f64).exp()).ln();
        assert_abs_diff_eq!(loss_value(&[5.0f64, 1.0, 1.0], 1, LossKind::MarginCe).unwrap(), hand, epsilon = 1e-12);
        assert!(loss_value(&[1.0f64, 2.0], 2, LossKind::Logit).is_err());
        assert!(loss_value(&[1.0f64], 0, LossKind::Logit).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let z = [0.3f64, -1.2, 2.0, 0.7];
        for kind in LossKind::ALL {
            let (_, g) = loss_with_grad(&z, 2, kind).unwrap();
            for j in 0..4 {
                let mut zp = z;
                zp[j] += 1e-6;
                let mut zm = z;
                zm[j] -= 1e-6;
                let fd = (loss_value(&zp, 2, kind).unwrap() - loss_value(&zm, 2, kind).unwrap()) / 2e-6;
                assert_abs_diff_eq!(fd, g[j], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let mut f = Array4::<f64>::zeros((1, 1, 9, 9));
        f[[0, 0, 4, 4]] = 1.0;
        let out = ti_smooth(&f, 5, 1.5).unwrap();
        let mut oracle = [[0.0f64; 5]; 5];
        let mut total = 0.0;
        for (dy, row) in oracle.iter_mut().enumerate() {
            for (dx, v) in row.iter_mut().enumerate() {
                let (a, b) = (dy as f64 - 2.0, dx as f64 - 2.0);
                *v = (-(a * a + b * b) / 4.5).exp();
                total += *v;
            }
        }
        for y in 0..9 {
            for x in 0..9 {
                let want = if (2..7).contains(&y) && (2..7).contains(&x) { oracle[y - 2][x - 2] / total } else { 0.0 };
                assert_abs_diff_eq!(out[[0, 0, y, x]], want, epsilon = 1e-15);
            }
        }
        let k = gaussian_kernel(5, 1.5).unwrap();
        assert_abs_diff_eq!(k.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(ti_smooth(&f, 4, 1.5).is_err());
    }

    #[test]
    fn smoothing_edge_cases() {
        let f = Array4::from_shape_fn((2, 3, 7, 6), |(a, b, c, d)| (a + 2 * b + 3 * c + 5 * d) as f64 * 0.1 - 1.0);
        assert_eq!(ti_smooth(&f, 1, 1.5).unwrap(), f);
        let flat = Array4::from_elem((1, 3, 12, 12), 0.7f64);
        let out = ti_smooth(&flat, 5, 1.5).unwrap();
        for y in 2..10 {
            for x in 2..10 {
                assert_abs_diff_eq!(out[[0, 1, y, x]], 0.7, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let x = Array4::from_elem((1, 3, 4, 4), 0.5f64);
        assert_eq!(project_linf(&x, &x, 0.1).unwrap(), x);
        let far = Array4::from_elem((1, 3, 4, 4), 0.9f64);
        let p = project_linf(&far, &x, 16.0 / 255.0).unwrap();
        assert!(p.iter().all(|v| (*v - (0.5 + 16.0 / 255.0)).abs() < 1e-15));
        let zero = Array4::zeros((1, 3, 4, 4));
        let below = Array4::from_elem((1, 3, 4, 4), -0.1f64);
        assert!(project_linf(&below, &zero, 0.5).unwrap().iter().all(|v| *v == 0.0));
        assert!(project_linf(&zero, &Array4::zeros((1, 3, 4, 5)), 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = AttackConfig::default();
        ok.validate().unwrap();
        assert_eq!(ok.iterations, 900);
        let json = serde_json::to_string(&ok).unwrap();
        assert!(json.contains("\"T\":900"));
        assert_eq!(serde_json::from_str::<AttackConfig>(&json).unwrap(), ok);
        for bad in [
            AttackConfig { alpha: 0.5, ..ok.clone() },
            AttackConfig { alpha: 0.0, ..ok.clone() },
            AttackConfig { iterations: 0, ..ok.clone() },
            AttackConfig { kernel_size: 4, ..ok.clone() },
            AttackConfig { copies: 0, ..ok.clone() },
            AttackConfig { epsilon: 1.5, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        AttackConfig { epsilon: 0.0, ..ok }.validate().unwrap();
    }

    fn linear_model() -> Network<f64> {
        let weight = Array2::from_shape_fn((3, 3 * 64), |(k, j)| ((k * 31 + j * 17) % 23) as f64 / 11.0 - 1.0);
        Network::new("linear", 3, vec![Layer::Flatten, Layer::Linear(Linear { weight, bias: ndarray::array![0.1, -0.2, 0.05] })]).unwrap()
    }

    fn inputs(n: usize, h: usize) -> Array4<f64> {
        Array4::from_shape_fn((n, 3, h, h), |(i, c, y, x)| ((i * 7 + c * 3 + y * 5 + x * 11) % 19) as f64 / 18.0)
    }

    #[test]
    fn single_step_matches_closed_form_on_a_linear_model() {
        let net = linear_model();
        let x = inputs(2, 8);
        let targets = [2usize, 0];
        let cfg = AttackConfig { iterations: 1, loss: LossKind::CrossEntropy, ..AttackConfig::default() };
        let res = tmi_attack(&[&net], &x, &targets, &cfg, &Identity).unwrap();

        let Layer::Linear(lin) = &net.layers[1] else { unreachable!() };
        let kernel = {
            let mut k = [[0.0f64; 5]; 5];
            let mut t = 0.0;
            for (a, row) in k.iter_mut().enumerate() {
                for (b, v) in row.iter_mut().enumerate() {
                    *v = (-(((a as f64 - 2.0).powi(2) + (b as f64 - 2.0).powi(2)) / 4.5)).exp();
                    t += *v;
                }
            }
            k.map(|r| r.map(|v| v / t))
        };
        for (i, &tgt) in targets.iter().enumerate() {
            let flat: Vec<f64> = x.slice(s![i, .., .., ..]).iter().copied().collect();
            let logits: Vec<f64> = (0..3).map(|k| lin.bias[k] + (0..192).map(|j| lin.weight[[k, j]] * flat[j]).sum::<f64>()).collect();
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let p: Vec<f64> = logits.iter().map(|l| (l - mx).exp() / z).collect();
            let grad: Vec<f64> = (0..192).map(|j| (0..3).map(|k| (p[k] - if k == tgt { 1.0 } else { 0.0 }) * lin.weight[[k, j]]).sum()).collect();
            for c in 0..3 {
                for y in 0..8usize {
                    for xx in 0..8usize {
                        let mut sm = 0.0;
                        for a in 0..5usize {
                            for b in 0..5usize {
                                let (yy, xs) = (y as isize + a as isize - 2, xx as isize + b as isize - 2);
                                if (0..8).contains(&yy) && (0..8).contains(&xs) {
                                    sm += kernel[a][b] * grad[c * 64 + yy as usize * 8 + xs as usize];
                                }
                            }
                        }
                        let orig = x[[i, c, y, xx]];
                        let step = if sm > 0.0 { -cfg.alpha } else if sm < 0.0 { cfg.alpha } else { 0.0 };
                        let want = (orig + step).clamp(orig - cfg.epsilon, orig + cfg.epsilon).clamp(0.0, 1.0);
                        assert_abs_diff_eq!(res.x_adv[[i, c, y, xx]], want, epsilon = 1e-15);
                    }
                }
            }
        }
    }

    fn tiny_cnn() -> Network<f64> {
        let mut rng = RngState::new(11).generator();
        Network::new(
            "tiny",
            4,
            vec![
                Layer::Normalize { mean: [0.5; 3], std: [0.25; 3] },
                Layer::Conv2d(Conv2d::new(3, 6, 3, 1, 1, &mut rng)),
                Layer::Relu,
                Layer::MaxPool2,
                Layer::Conv2d(Conv2d::new(6, 8, 3, 1, 1, &mut rng)),
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Linear(Linear::new(8, 4, &mut rng)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_budget_returns_input_and_budget_holds_each_step() {
        let net = tiny_cnn();
        let x = inputs(3, 12);
        let zero = AttackConfig { epsilon: 0.0, iterations: 3, transform_id: "s4st".into(), ..AttackConfig::default() };
        let s4 = parse_transform::<f64>("s4st").unwrap();
        assert_eq!(tmi_attack(&[&net], &x, &[1, 2, 3], &zero, s4.as_ref()).unwrap().x_adv, x);
        let cfg = AttackConfig { iterations: 12, ..AttackConfig::default() };
        let mut worst = 0.0f64;
        tmi_attack_observed(&[&net], &x, &[1, 2, 3], &cfg, s4.as_ref(), &mut |_, xa| {
            for (a, b) in xa.iter().zip(x.iter()) {
                assert!((0.0..=1.0).contains(a));
                worst = worst.max((a - b).abs());
            }
        })
        .unwrap();
        assert!(worst <= cfg.epsilon + 1e-12 && worst > 0.0);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let a = tiny_cnn();
        let b = {
            let mut n = tiny_cnn();
            if let Layer::Linear(l) = &mut n.layers[7] {
                l.weight.mapv_inplace(|v| -0.5 * v + 0.1);
            }
            n
        };
        let x = inputs(2, 10);
        for kind in LossKind::ALL {
            let (_, g) = loss_and_input_grad(&[&a, &b], &x, &[1, 3], kind).unwrap();
            let total = |x: &Array4<f64>| loss_and_input_grad(&[&a, &b], x, &[1, 3], kind).unwrap().0.iter().sum::<f64>();
            for idx in [(0, 0, 0, 0), (0, 2, 5, 7), (1, 1, 9, 9), (1, 0, 4, 2)] {
                let mut xp = x.clone();
                xp[idx] += 1e-6;
                let mut xm = x.clone();
                xm[idx] -= 1e-6;
                let fd = (total(&xp) - total(&xm)) / 2e-6;
                let rel = (fd - g[idx]).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "{kind} {idx:?}: {fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn deterministic_transforms_ignore_copies_and_runs_repeat() {
        let net = tiny_cnn();
        let x = inputs(2, 12);
        let base = AttackConfig { iterations: 4, ..AttackConfig::default() };
        let one = tmi_attack(&[&net], &x, &[0, 1], &base, &Identity).unwrap();
        let many = tmi_attack(&[&net], &x, &[0, 1], &AttackConfig { copies: 3, ..base.clone() }, &Identity).unwrap();
        assert_eq!(one.x_adv, many.x_adv);
        assert_eq!(one.grad_norm_trace, many.grad_norm_trace);
        let s4 = parse_transform::<f64>("s4st").unwrap();
        let r1 = tmi_attack(&[&net], &x, &[0, 1], &AttackConfig { copies: 2, ..base.clone() }, s4.as_ref()).unwrap();
        let r2 = tmi_attack(&[&net], &x, &[0, 1], &AttackConfig { copies: 2, ..base.clone() }, s4.as_ref()).unwrap();
        assert_eq!(r1.x_adv, r2.x_adv);
        assert_eq!(r1.loss_trace, r2.loss_trace);
        assert_eq!(r1.grad_norm_trace.len(), 4);
    }

    #[test]
    fn non_finite_gradient_is_reported_with_iteration() {
        let mut net = tiny_cnn();
        if let Layer::Linear(l) = &mut net.layers[7] {
            l.weight[[0, 0]] = f64::NAN;
        }
        let x = inputs(1, 12);
        let cfg = AttackConfig { iterations: 2, ..AttackConfig::default() };
        match tmi_attack(&[&net], &x, &[1], &cfg, &Identity) {
            Err(Error::NonFiniteGradient { iteration, .. }) => assert_eq!(iteration, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
