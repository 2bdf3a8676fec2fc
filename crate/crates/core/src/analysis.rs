//! Correlation analysis, complementary-transformation selection and
//! black-box parameter search.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{tmi_attack, AttackConfig};
use crate::error::{invalid, Error, Result};
use crate::estimators::{grid_variants, variant_target_probs, DEFAULT_LATTICE_SEED};
use crate::nn::Network;
use crate::rng::RngState;
use crate::s4st::S4STParams;
use crate::scalar::Scalar;
use crate::transform::S4ST;
use crate::transform_kit::{IntensityGrid, TransformKind, TransformVariant, TwoAxisLattice};

/// Sample Pearson correlation.
pub fn pcc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(invalid(format!("lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(invalid("need at least three observations"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Rows are configurations, columns are measured quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct STTable {
    pub row_labels: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<f64>>,
}

impl STTable {
    pub fn new(row_labels: Vec<String>, columns: Vec<String>, cells: Vec<Vec<f64>>) -> Result<Self> {
        if row_labels.len() != cells.len() {
            return Err(invalid("row label count differs from row count"));
        }
        if let Some(bad) = cells.iter().position(|r| r.len() != columns.len()) {
            return Err(invalid(format!("row {bad} has {} cells, expected {}", cells[bad].len(), columns.len())));
        }
        Ok(Self { row_labels, columns, cells })
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.cells.iter().map(|r| r[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Pairwise column correlations. `None` marks an undefined cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PccMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl PccMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        self.values[i][j]
    }

    pub fn row(&self, label: &str) -> Option<BTreeMap<String, f64>> {
        let i = self.labels.iter().position(|l| l == label)?;
        Some(
            self.labels
                .iter()
                .zip(&self.values[i])
                .filter_map(|(l, v)| v.map(|v| (l.clone(), v)))
                .collect(),
        )
    }
}

pub fn pcc_matrix(table: &STTable) -> Result<PccMatrix> {
    if table.cells.len() < 3 {
        return Err(invalid("need at least three rows"));
    }
    let cols: Vec<Vec<f64>> = (0..table.columns.len()).map(|j| table.column(j)).collect();
    let n = cols.len();
    let mut values = vec![vec![None; n]; n];
    for i in 0..n {
        values[i][i] = Some(1.0);
        for j in i + 1..n {
            let v = match pcc(&cols[i], &cols[j]) {
                Ok(v) => Some(v),
                Err(Error::UndefinedCorrelation(_)) => None,
                Err(e) => return Err(e),
            };
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(PccMatrix { labels: table.columns.clone(), values })
}

/// Kinds left out of the complementary pool by default.
pub fn default_exclusions() -> BTreeSet<TransformKind> {
    [TransformKind::Translate, TransformKind::Crop].into_iter().collect()
}

/// The `n` keys with the lowest correlation, ties broken by key order.
pub fn select_complementary<K: Ord + Clone>(pcc_row: &BTreeMap<K, f64>, n: usize, excluded: &BTreeSet<K>) -> Result<Vec<K>> {
    let mut pool: Vec<(&K, f64)> = pcc_row.iter().filter(|(k, _)| !excluded.contains(k)).map(|(k, v)| (k, *v)).collect();
    if pool.iter().any(|(_, v)| v.is_nan()) {
        return Err(invalid("correlation row contains NaN"));
    }
    if n > pool.len() {
        return Err(invalid(format!("asked for {n} kinds but only {} are available", pool.len())));
    }
    pool.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(pool.into_iter().take(n).map(|(k, _)| k.clone()).collect())
}

/// Box bounds for the four S⁴ST parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub p_r: (f64, f64),
    /// Lower bound is exclusive.
    pub r: (f64, f64),
    pub p_aug: (f64, f64),
    pub m: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { p_r: (0.0, 1.0), r: (1.0, 3.0), p_aug: (0.0, 1.0), m: (1, 9) }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = self.p_r.0 <= self.p_r.1
            && self.p_r.0 >= 0.0
            && self.p_r.1 <= 1.0
            && self.p_aug.0 <= self.p_aug.1
            && self.p_aug.0 >= 0.0
            && self.p_aug.1 <= 1.0
            && self.r.0 >= 1.0
            && self.r.0 < self.r.1
            && self.m.0 >= 1
            && self.m.0 <= self.m.1;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("malformed search space {self:?}")))
        }
    }

    /// Maps a point of the unit cube to parameters; `m` is rounded.
    pub fn decode(&self, u: [f64; 4]) -> (S4STParams, f64) {
        let lerp = |(a, b): (f64, f64), t: f64| a + (b - a) * t.clamp(0.0, 1.0);
        let m_raw = lerp((self.m.0 as f64 - 0.5, self.m.1 as f64 + 0.5), u[3]);
        let m = (m_raw.round() as usize).clamp(self.m.0, self.m.1);
        // r's lower bound is open; nudge off it.
        let r = lerp(self.r, u[1]).max(self.r.0 + 1e-9);
        (S4STParams { p_r: lerp(self.p_r, u[0]), r, p_aug: lerp(self.p_aug, u[2]), m }, m_raw)
    }

    /// Unit-cube coordinates of already-decoded parameters.
    pub fn encode(&self, p: &S4STParams) -> [f64; 4] {
        let inv = |(a, b): (f64, f64), v: f64| if b > a { (v - a) / (b - a) } else { 0.0 };
        [
            inv(self.p_r, p.p_r),
            inv(self.r, p.r),
            inv(self.p_aug, p.p_aug),
            inv((self.m.0 as f64 - 0.5, self.m.1 as f64 + 0.5), p.m as f64),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialPhase {
    Random,
    Acquisition,
}

/// One line of the trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub phase: TrialPhase,
    pub optimizer: String,
    pub params: S4STParams,
    /// Continuous proposal for `m` before rounding.
    pub m_raw: f64,
    pub value: Option<f64>,
    pub error: Option<String>,
    pub expected_improvement: Option<f64>,
    /// Seconds since the Unix epoch when the trial finished.
    pub timestamp: f64,
}

impl TrialRecord {
    /// Equality ignoring the wall-clock timestamp.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { timestamp: 0.0, ..self.clone() } == Self { timestamp: 0.0, ..other.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: S4STParams,
    pub best_value: f64,
    pub log: Vec<TrialRecord>,
}

impl TuneOutcome {
    /// Trial log as JSON lines.
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub const OPTIMIZER: &str = "gp-matern52-ei";

const LENGTH_SCALES: [f64; 6] = [0.08, 0.15, 0.25, 0.4, 0.6, 1.0];
const NOISE: f64 = 1e-6;
const RANDOM_CANDIDATES: usize = 1000;
const LOCAL_CANDIDATES: usize = 300;
const EI_XI: f64 = 0.01;

fn matern52(a: &[f64; 4], b: &[f64; 4], ls: f64) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() / ls;
    let s5 = 5f64.sqrt() * d;
    (1.0 + s5 + 5.0 * d * d / 3.0) * (-s5).exp()
}

struct Gp {
    xs: Vec<[f64; 4]>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    ls: f64,
    mean: f64,
    scale: f64,
}

impl Gp {
    fn fit(xs: &[[f64; 4]], ys: &[f64]) -> Option<Self> {
        let n = xs.len();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y = DVector::from_iterator(n, ys.iter().map(|v| (v - mean) / scale));
        let mut best: Option<(f64, Self)> = None;
        for &ls in &LENGTH_SCALES {
            let k = DMatrix::from_fn(n, n, |i, j| matern52(&xs[i], &xs[j], ls) + if i == j { NOISE } else { 0.0 });
            let Some(chol) = k.cholesky() else { continue };
            let alpha = chol.solve(&y);
            let logdet: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
            let nll = 0.5 * y.dot(&alpha) + 0.5 * logdet;
            if best.as_ref().is_none_or(|(b, _)| nll < *b) {
                best = Some((nll, Self { xs: xs.to_vec(), chol, alpha, ls, mean, scale }));
            }
        }
        best.map(|(_, g)| g)
    }

    /// Expected improvement over `best` (original units) at each candidate.
    fn expected_improvement(&self, cands: &[[f64; 4]], best: f64) -> Vec<f64> {
        let n = self.xs.len();
        let ks = DMatrix::from_fn(n, cands.len(), |i, j| matern52(&self.xs[i], &cands[j], self.ls));
        let mu = ks.transpose() * &self.alpha;
        let v = self.chol.l().solve_lower_triangular(&ks).expect("non-singular factor");
        let target = (best - self.mean) / self.scale + EI_XI;
        (0..cands.len())
            .map(|j| {
                let var = (1.0 + NOISE - v.column(j).norm_squared()).max(1e-12);
                let sd = var.sqrt();
                let z = (mu[j] - target) / sd;
                ((mu[j] - target) * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
            })
            .collect()
    }
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Sequential GP/expected-improvement maximization of `objective`.
pub fn bayes_tune(
    objective: &mut dyn FnMut(&S4STParams) -> Result<f64>,
    space: &SearchSpace,
    trials: usize,
    init_random: usize,
    seed: u64,
) -> Result<TuneOutcome> {
    space.validate()?;
    if init_random == 0 || trials < init_random {
        return Err(invalid(format!("need trials >= init_random >= 1, got {trials} and {init_random}")));
    }
    let mut rng = RngState::new(seed).derive(0x7475_6e65).generator();
    let mut log: Vec<TrialRecord> = Vec::with_capacity(trials);
    let mut seen_x: Vec<[f64; 4]> = Vec::new();
    let mut seen_y: Vec<f64> = Vec::new();
    let random_u = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 4] { std::array::from_fn(|_| rng.random::<f64>()) };
    for trial in 0..trials {
        let gp = if trial < init_random || seen_y.len() < 2 { None } else { Gp::fit(&seen_x, &seen_y) };
        let (u, phase, ei) = match gp {
            None => (random_u(&mut rng), TrialPhase::Random, None),
            Some(gp) => {
                let best_y = seen_y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let best_x = seen_x[seen_y.iter().position(|v| *v == best_y).expect("non-empty")];
                let mut cands: Vec<[f64; 4]> = (0..RANDOM_CANDIDATES).map(|_| random_u(&mut rng)).collect();
                for _ in 0..LOCAL_CANDIDATES {
                    let step = if rng.random::<bool>() { 0.05 } else { 0.15 };
                    cands.push(std::array::from_fn(|d| (best_x[d] + step * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0)));
                }
                let eis = gp.expected_improvement(&cands, best_y);
                let (at, ei) = eis.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
                (cands[at], TrialPhase::Acquisition, Some(ei))
            }
        };
        let (params, m_raw) = space.decode(u);
        let (value, error) = match objective(&params) {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("objective returned {v}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(v) = value {
            seen_x.push(space.encode(&params));
            seen_y.push(v);
        }
        log.push(TrialRecord {
            trial,
            phase,
            optimizer: OPTIMIZER.into(),
            params,
            m_raw,
            value,
            error,
            expected_improvement: ei,
            timestamp: now(),
        });
    }
    let best = log
        .iter()
        .filter_map(|r| r.value.map(|v| (v, r.params)))
        .fold(None, |acc: Option<(f64, S4STParams)>, (v, p)| match acc {
            Some((bv, _)) if bv >= v => acc,
            _ => Some((v, p)),
        })
        .ok_or(Error::AllTrialsFailed(trials))?;
    Ok(TuneOutcome { best: best.1, best_value: best.0, log })
}

/// Self-transferability objective with the clean-side probabilities
/// computed once.
pub struct TuningContext<'a, T: Scalar> {
    pub surrogate: &'a Network<T>,
    pub images: Array4<T>,
    pub targets: Vec<usize>,
    pub budget: AttackConfig,
    variants: Vec<(TransformKind, Vec<TransformVariant>, Vec<f64>)>,
}

impl<'a, T: Scalar> TuningContext<'a, T> {
    pub fn new(surrogate: &'a Network<T>, images: Array4<T>, targets: Vec<usize>, budget: AttackConfig, coarse_grid: &IntensityGrid) -> Result<Self> {
        let lattice = TwoAxisLattice::new(DEFAULT_LATTICE_SEED);
        let variants = TransformKind::ALL
            .iter()
            .map(|&kind| {
                let vs = grid_variants(kind, coarse_grid, lattice)?;
                let clean = variant_target_probs(surrogate, &vs, &images, &targets)?;
                Ok((kind, vs, clean))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { surrogate, images, targets, budget, variants })
    }

    /// Per-kind self-transferability of adversarial examples `x_adv`.
    pub fn per_kind(&self, x_adv: &Array4<T>) -> Result<BTreeMap<TransformKind, f64>> {
        self.variants
            .iter()
            .map(|(kind, vs, clean)| {
                let adv = variant_target_probs(self.surrogate, vs, x_adv, &self.targets)?;
                let gap = adv.iter().zip(clean).map(|(a, c)| a - c).sum::<f64>() / adv.len() as f64;
                Ok((*kind, gap))
            })
            .collect()
    }

    pub fn score_examples(&self, x_adv: &Array4<T>) -> Result<f64> {
        let per = self.per_kind(x_adv)?;
        Ok(per.values().sum::<f64>() / per.len() as f64)
    }

    /// Attacks with `candidate` and scores the result.
    pub fn evaluate(&self, candidate: &S4STParams) -> Result<f64> {
        let transform = S4ST::new(*candidate)?;
        let res = tmi_attack(&[self.surrogate], &self.images, &self.targets, &self.budget, &transform)?;
        self.score_examples(&res.x_adv)
    }
}

/// Mean self-transferability over the 12 basic kinds of examples crafted
/// with `candidate`.
pub fn tuning_objective<T: Scalar>(
    surrogate: &Network<T>,
    images: &Array4<T>,
    targets: &[usize],
    candidate: &S4STParams,
    attack_budget: &AttackConfig,
    coarse_grid: &IntensityGrid,
) -> Result<f64> {
    TuningContext::new(surrogate, images.clone(), targets.to_vec(), attack_budget.clone(), coarse_grid)?.evaluate(candidate)
}
