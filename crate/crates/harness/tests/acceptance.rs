//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs every criterion by default; numeric arguments select a subset
//! (`cargo test --test acceptance -- 5 6`). Exits non-zero when any
//! selected criterion fails.

mod common;

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use s4st_core::analysis::{bayes_tune, pcc, pcc_matrix, SearchSpace, STTable, TuningContext};
use s4st_core::attack::{loss_and_input_grad, tmi_attack_observed};
use s4st_core::estimators::{default_k, extract_representations, knn_overlap_alignment, InputTag, RepresentationSet};
use s4st_core::nn::{Conv2d, Layer, Linear};
use s4st_core::transform_kit::{apply, enumerate_variants, intensity_grid, round_dim, TransformKind, VariantParams};
use s4st_core::{parse_transform, AttackConfig, Image, LossKind, Network, RngState, S4STParams};
use s4st_harness::dataset::Dataset;
use s4st_harness::desk;
use s4st_harness::eval::evaluate;
use s4st_harness::experiment::{self, in_memory_dataset, s4st_id, ExperimentConfig, RigSource, Workspace};
use s4st_harness::persist::{linf_per_image, load_meta};
use s4st_harness::rig::Rig;
use s4st_harness::timing::timing_probe;

type Check = Result<(bool, String), String>;

struct Ctx {
    rig: Rig,
    identity_adv: OnceCell<(Dataset, Array4<f32>)>,
}

impl Ctx {
    fn dataset(&self, n: usize) -> Dataset {
        let (x, y, t) = self.rig.manifest.spec.eval_corpus(n);
        in_memory_dataset(x, &y, &t, self.rig.manifest.spec.class_count)
    }

    fn workspace(&self, clean: Dataset) -> Workspace<'_> {
        Workspace::new(&self.rig, &ExperimentConfig::default(), clean).expect("workspace")
    }

    /// Mean tSuc per victim over seeds.
    fn tsuc(&self, n: usize, transform: &str, seeds: &[u64]) -> Result<BTreeMap<String, f64>, String> {
        let ws = self.workspace(self.dataset(n));
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for &seed in seeds {
            let cfg = AttackConfig { seed, ..desk::attack_config() };
            let (res, _, _) = ws.attack(&cfg, transform, 0).map_err(|e| e.to_string())?;
            if transform == "identity" && seed == 0 && n == 200 {
                let _ = self.identity_adv.set((ws.clean.clone(), res.x_adv.clone()));
            }
            let report = evaluate(&ws.victims, &res.x_adv, &ws.clean).map_err(|e| e.to_string())?;
            for v in &report.victims {
                *out.entry(v.model_id.clone()).or_default() += v.tsuc / seeds.len() as f64;
            }
        }
        Ok(out)
    }
}

fn textured(h: usize, w: usize) -> Image<f64> {
    // Values stay below 1 so a solarize threshold of 1 inverts nothing.
    Image::from_fn(h, w, |c, y, x| ((c * 31 + y * 7 + x * 13) % 23) as f64 / 23.0).unwrap()
}

fn c1_geometry() -> Check {
    let sizes = [(32, 32), (13, 17), (224, 224), (299, 201)];
    let intensities = [0.0, 0.25, 0.5, 0.8, 1.0];
    let mut checked = 0usize;
    for &(h, w) in &sizes {
        let img = textured(h, w);
        for kind in TransformKind::ALL {
            for &s in &intensities {
                let pair = kind.is_two_axis().then_some((s, 1.0 - s));
                for v in enumerate_variants(kind, s, pair).map_err(|e| e.to_string())? {
                    let out = apply(&v, &img).map_err(|e| format!("{kind} s={s}: {e}"))?;
                    let want = match v.params {
                        VariantParams::Scaling { factor } => {
                            let f = 1.0 + 1.5 * s;
                            if v.direction == 0 && factor != f || v.direction == 1 && factor != 1.0 / f {
                                return Ok((false, format!("scaling factor {factor} at s={s}")));
                            }
                            (round_dim(factor * h as f64), round_dim(factor * w as f64))
                        }
                        VariantParams::Crop { area_fraction } => {
                            if area_fraction >= 1.0 {
                                (h, w)
                            } else {
                                (round_dim(area_fraction.sqrt() * h as f64), round_dim(area_fraction.sqrt() * w as f64))
                            }
                        }
                        _ => (h, w),
                    };
                    if out.dims() != want {
                        return Ok((false, format!("{kind} s={s} dir {}: {:?} != {want:?} on {h}x{w}", v.direction, out.dims())));
                    }
                    checked += 1;
                }
            }
            // Zero intensity is the identity for every kind except flip.
            if kind != TransformKind::Flip {
                let pair = kind.is_two_axis().then_some((0.0, 0.0));
                for v in enumerate_variants(kind, 0.0, pair).map_err(|e| e.to_string())? {
                    let out = apply(&v, &img).map_err(|e| e.to_string())?;
                    if out.pixels() != img.pixels() {
                        return Ok((false, format!("{kind} at s=0 is not the identity on {h}x{w}")));
                    }
                    checked += 1;
                }
            }
        }
        // Involutions.
        for v in enumerate_variants(TransformKind::Flip, 0.5, None).map_err(|e| e.to_string())? {
            let twice = apply(&v, &apply(&v, &img).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            if twice.pixels() != img.pixels() {
                return Ok((false, format!("flip {:?} is not an involution", v.params)));
            }
            checked += 1;
        }
        if h == w {
            let half = enumerate_variants(TransformKind::Rotation, 1.0, None).map_err(|e| e.to_string())?;
            let twice = apply(&half[0], &apply(&half[0], &img).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let err = twice.linf_distance(&img).map_err(|e| e.to_string())?;
            if err > 1e-9 {
                return Ok((false, format!("180-degree rotation applied twice is off by {err}")));
            }
            checked += 1;
        }
    }
    Ok((true, format!("{checked} variant checks over {} frame sizes", sizes.len())))
}

fn tiny_network() -> Network<f64> {
    let mut rng = RngState::new(5).generator();
    Network::new(
        "tiny",
        4,
        vec![
            Layer::Normalize { mean: [0.5; 3], std: [0.25; 3] },
            Layer::Conv2d(Conv2d::new(3, 5, 3, 1, 1, &mut rng)),
            Layer::Relu,
            Layer::AvgPool2,
            Layer::Conv2d(Conv2d::new(5, 6, 3, 1, 1, &mut rng)),
            Layer::Relu,
            Layer::GlobalAvgPool,
            Layer::Linear(Linear::new(6, 4, &mut rng)),
        ],
    )
    .unwrap()
}

fn c2_attack(ctx: &Ctx) -> Check {
    let clean = ctx.dataset(64);
    let ws = ctx.workspace(clean);
    let cfg = AttackConfig::default();
    let transform = parse_transform::<f32>(&cfg.transform_id).map_err(|e| e.to_string())?;
    let x = &ws.clean.images;
    let eps = cfg.epsilon as f32 + 1e-6;
    let mut worst = 0.0f32;
    let mut out_of_range = 0usize;
    let mut steps = 0usize;
    tmi_attack_observed(&ws.surrogates, x, &ws.clean.manifest.targets(), &cfg, transform.as_ref(), &mut |_, xa| {
        steps += 1;
        for (a, b) in xa.iter().zip(x.iter()) {
            worst = worst.max((a - b).abs());
            if !(0.0..=1.0).contains(a) {
                out_of_range += 1;
            }
        }
    })
    .map_err(|e| e.to_string())?;

    let net = tiny_network();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs = Array4::from_shape_fn((2, 3, 8, 8), |_| rng.random_range(0.1..0.9));
    let targets = [1, 3];
    let (_, grad) = loss_and_input_grad(&[&net], &xs, &targets, LossKind::MarginCe).map_err(|e| e.to_string())?;
    let loss = |x: &Array4<f64>| loss_and_input_grad(&[&net], x, &targets, LossKind::MarginCe).map(|(l, _)| l.iter().sum::<f64>());
    let h = 1e-6;
    let mut fd = Array4::<f64>::zeros(xs.dim());
    for idx in ndarray::indices(xs.dim()) {
        let mut plus = xs.clone();
        let mut minus = xs.clone();
        plus[idx] += h;
        minus[idx] -= h;
        fd[idx] = (loss(&plus).map_err(|e| e.to_string())? - loss(&minus).map_err(|e| e.to_string())?) / (2.0 * h);
    }
    let diff = (&grad - &fd).mapv(|v| v * v).sum().sqrt();
    let rel = diff / fd.mapv(|v| v * v).sum().sqrt();

    let pass = worst <= eps && out_of_range == 0 && steps == cfg.iterations && rel < 1e-4;
    Ok((
        pass,
        format!(
            "{steps} steps on 64 images: max |x_adv - x| = {worst:.6} (eps {:.6}), {out_of_range} values outside [0,1]; gradient rel. error {rel:.2e}",
            cfg.epsilon
        ),
    ))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

/// Neighbour set of row `i` found by scoring every k-subset of the others.
fn brute_neighbours(rows: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let others: Vec<usize> = (0..rows.len()).filter(|&j| j != i).collect();
    let d: Vec<f64> = others.iter().map(|&j| cosine(&rows[i], &rows[j])).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        let total: f64 = pick.iter().map(|&p| d[p]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, pick.iter().map(|&p| others[p]).collect()));
        }
        // Next combination in lexicographic order.
        let mut pos = k;
        while pos > 0 && pick[pos - 1] == others.len() - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        pick[pos - 1] += 1;
        for q in pos..k {
            pick[q] = pick[q - 1] + 1;
        }
    }
    best.expect("at least one subset").1
}

fn rep(rows: &[Vec<f64>]) -> RepresentationSet {
    let dim = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    RepresentationSet::new(Array2::from_shape_vec((rows.len(), dim), flat).unwrap(), "oracle", InputTag::Clean).unwrap()
}

fn c3_knn() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..50 {
        let b = rng.random_range(6..=20);
        let k = rng.random_range(1..=5);
        let dim = rng.random_range(2..=8);
        let mut draw = || -> Vec<Vec<f64>> { (0..b).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect() };
        let (a, c) = (draw(), draw());
        let mut total = 0.0;
        for i in 0..b {
            let (na, nc) = (brute_neighbours(&a, i, k), brute_neighbours(&c, i, k));
            total += na.iter().filter(|j| nc.contains(j)).count() as f64 / k as f64;
        }
        let oracle = total / b as f64;
        let got = knn_overlap_alignment(&rep(&a), &rep(&c), k).map_err(|e| e.to_string())?;
        if got != oracle {
            return Ok((false, format!("case {case} (b={b}, k={k}): {got} != {oracle}")));
        }
    }
    let (b, k) = (1000, 100);
    let mut draw = || -> Vec<Vec<f64>> { (0..b).map(|_| (0..32).map(|_| rng.sample(StandardNormal)).collect()).collect() };
    let (a, c) = (draw(), draw());
    let null = knn_overlap_alignment(&rep(&a), &rep(&c), k).map_err(|e| e.to_string())?;
    let expected = k as f64 / (b - 1) as f64;
    let pass = (null - expected).abs() <= 0.03;
    Ok((pass, format!("50 brute-force cases exact; null overlap {null:.4} vs {expected:.4}")))
}

fn c4_alignment(ctx: &Ctx) -> Check {
    if ctx.identity_adv.get().is_none() {
        ctx.tsuc(200, "identity", &[0])?;
    }
    let (clean, adv) = ctx.identity_adv.get().expect("identity examples");
    let x = &clean.images;
    let k = default_k(x.len_of(Axis(0)));
    let surrogate = ctx.rig.surrogate().1;
    let phi = extract_representations(surrogate, "surrogate", x, InputTag::Clean).map_err(|e| e.to_string())?;
    let phi_adv = extract_representations(surrogate, "surrogate", adv, InputTag::Adversarial).map_err(|e| e.to_string())?;
    let mut cross = Vec::new();
    for (entry, net) in ctx.rig.victims() {
        let psi = extract_representations(net, &entry.model_id, x, InputTag::Clean).map_err(|e| e.to_string())?;
        cross.push((entry.model_id.clone(), knn_overlap_alignment(&phi, &psi, k).map_err(|e| e.to_string())?));
    }
    let mean = cross.iter().map(|c| c.1).sum::<f64>() / cross.len() as f64;
    let self_adv = knn_overlap_alignment(&phi_adv, &phi, k).map_err(|e| e.to_string())?;
    let pass = cross.iter().all(|c| c.1 > self_adv) && mean - self_adv > 0.1;
    let parts: Vec<String> = cross.iter().map(|(m, v)| format!("{m} {v:.3}")).collect();
    Ok((pass, format!("Alignment(Phi,Psi) {mean:.3} [{}] vs Alignment(Phi_adv,Phi) {self_adv:.3} (k={k})", parts.join(", "))))
}

fn c5_ordering(ctx: &Ctx) -> Check {
    let seeds = [0, 1, 2];
    let held = ctx.rig.held_out_victim().0.model_id.clone();
    let full = ctx.tsuc(200, &s4st_id(&desk::S4ST_FULL), &seeds)?[&held];
    let base = ctx.tsuc(200, &s4st_id(&desk::S4ST_FULL.base_only()), &seeds)?[&held];
    let identity = ctx.tsuc(200, "identity", &seeds)?[&held];
    let pass = full - base >= 5.0 && base - identity >= 5.0;
    Ok((pass, format!("{held}, 200 images x 3 seeds: S4ST {full:.1}% > Base {base:.1}% > identity {identity:.1}%")))
}

fn c6_ranking(ctx: &Ctx) -> Check {
    let seeds = [0, 1, 2];
    let s = 0.8;
    let mean = |m: &BTreeMap<String, f64>| m.values().sum::<f64>() / m.len() as f64;
    let scaling = mean(&ctx.tsuc(100, &format!("basic:scaling:{s}"), &seeds)?);
    let mut parts = vec![format!("scaling {scaling:.1}")];
    let mut pass = true;
    for kind in TransformKind::ALL.iter().filter(|k| k.is_color()) {
        let t = mean(&ctx.tsuc(100, &format!("basic:{kind}:{s}"), &seeds)?);
        pass &= scaling >= t;
        parts.push(format!("{kind} {t:.1}"));
    }
    Ok((pass, format!("mean tSuc over victims, s={s}, 100 images x 3 seeds: {}", parts.join(", "))))
}

fn c7_pcc() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let n = rng.random_range(3..40);
        // Integer-valued data keeps the oracle's raw sums exact.
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-50..=50) as f64).collect();
        let ys: Vec<f64> = if i % 2 == 0 {
            xs.iter().map(|x| 3.0 * x + rng.random_range(-20..=20) as f64).collect()
        } else {
            (0..n).map(|_| rng.random_range(-50..=50) as f64).collect()
        };
        let nf = n as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
        let sxx: f64 = xs.iter().map(|a| a * a).sum();
        let syy: f64 = ys.iter().map(|b| b * b).sum();
        let oracle = (nf * sxy - sx * sy) / ((nf * sxx - sx * sx).sqrt() * (nf * syy - sy * sy).sqrt());
        let got = pcc(&xs, &ys).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle).abs());
    }
    let cells: Vec<Vec<f64>> = (0..15).map(|_| (0..13).map(|_| rng.random::<f64>()).collect()).collect();
    let table = STTable::new((0..15).map(|i| format!("row{i}")).collect(), (0..13).map(|j| format!("col{j}")).collect(), cells)
        .map_err(|e| e.to_string())?;
    let m = pcc_matrix(&table).map_err(|e| e.to_string())?;
    let n = m.labels.len();
    let symmetric = (0..n).all(|i| (0..n).all(|j| m.values[i][j] == m.values[j][i]));
    let unit = (0..n).all(|i| m.values[i][i] == Some(1.0));
    Ok((worst <= 1e-10 && symmetric && unit, format!("max |pcc - oracle| {worst:.1e} on 20 vectors; matrix symmetric {symmetric}, unit diagonal {unit}")))
}

fn c8_tuning(ctx: &Ctx) -> Check {
    let optimum = (0.3, 2.2, 0.6, 4usize);
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..5 {
        let mut f = |p: &S4STParams| {
            Ok(-(p.p_r - optimum.0).powi(2) - ((p.r - optimum.1) / 2.0).powi(2) - (p.p_aug - optimum.2).powi(2)
                - 0.01 * (p.m as f64 - optimum.3 as f64).powi(2))
        };
        let out = bayes_tune(&mut f, &SearchSpace::default(), 100, 10, seed).map_err(|e| e.to_string())?;
        let b = out.best;
        if (b.p_r - optimum.0).abs() < 0.1 && (b.r - optimum.1).abs() < 0.1 && (b.p_aug - optimum.2).abs() < 0.1 {
            hits += 1;
        } else {
            misses.push(format!("seed {seed}: [{:.3}, {:.3}, {:.3}, {}]", b.p_r, b.r, b.p_aug, b.m));
        }
    }

    let (x, _, targets) = ctx.rig.manifest.spec.tuning_corpus(30);
    let budget = AttackConfig { iterations: 150, ..desk::attack_config() };
    let grid = intensity_grid(10).map_err(|e| e.to_string())?;
    let tc = TuningContext::new(ctx.rig.surrogate().1, x, targets, budget, &grid).map_err(|e| e.to_string())?;
    let out = bayes_tune(&mut |p| tc.evaluate(p), &SearchSpace::default(), 16, 6, 0).map_err(|e| e.to_string())?;
    let default = tc.evaluate(&S4STParams::default()).map_err(|e| e.to_string())?;
    let bound = default - 0.05 * default.abs();
    let b = out.best;
    let pass = hits == 5 && out.best_value >= bound;
    Ok((
        pass,
        format!(
            "synthetic {hits}/5 within 0.1{}; desk tuned [{:.2}, {:.2}, {:.2}, {}] scores {:.4} vs default {default:.4}",
            if misses.is_empty() { String::new() } else { format!(" ({})", misses.join("; ")) },
            b.p_r,
            b.r,
            b.p_aug,
            b.m,
            out.best_value
        ),
    ))
}

fn c9_overhead(ctx: &Ctx) -> Check {
    let ws = ctx.workspace(ctx.dataset(32));
    let cfg = AttackConfig { iterations: 30, ..desk::attack_config() };
    let mut per_iter = BTreeMap::new();
    for id in ["identity".to_string(), "s4st".to_string(), s4st_id(&desk::S4ST_FULL)] {
        let mut run = || ws.attack(&cfg, &id, 0).map(|_| ());
        let stats = timing_probe(&mut run, 32, 3).map_err(|e| e.to_string())?;
        per_iter.insert(id, stats.median / cfg.iterations as f64);
    }
    let base = per_iter["identity"];
    let ratios: Vec<(String, f64)> = per_iter.iter().filter(|(k, _)| *k != "identity").map(|(k, v)| (k.clone(), v / base)).collect();
    let pass = ratios.iter().all(|r| r.1 < 2.0);
    let parts: Vec<String> = ratios.iter().map(|(k, r)| format!("{k} {r:.2}x")).collect();
    Ok((pass, format!("identity {:.3} ms per image-iteration; overhead {}", base * 1e3, parts.join(", "))))
}

fn c10_persistence() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig {
        name: "roundtrip".into(),
        rig: RigSource { dir: Some(common::rig_dir()), ..RigSource::default() },
        images: Some(40),
        attack: AttackConfig { iterations: 60, transform_id: s4st_id(&desk::S4ST_FULL), ..desk::attack_config() },
        seeds: vec![0, 1],
        curve_every: 0,
        ..ExperimentConfig::default()
    };
    let dir = experiment::run_experiment_in(&cfg, root.path()).map_err(|e| e.to_string())?;
    let (_, _, clean) = experiment::open_experiment(&dir).map_err(|e| e.to_string())?;
    let mut identical = 0;
    let mut within = 0;
    let mut total = 0;
    let mut worst = 0.0f64;
    for seed in cfg.seeds() {
        let stored = std::fs::read_to_string(dir.join(format!("runs/seed-{seed}/eval_report.json"))).map_err(|e| e.to_string())?;
        let again = experiment::reevaluate(&dir, seed).map_err(|e| e.to_string())?;
        if serde_json::to_string_pretty(&again).map_err(|e| e.to_string())? + "\n" == stored {
            identical += 1;
        }
        let adv = experiment::load_run(&dir, seed, &clean).map_err(|e| e.to_string())?;
        let eps = load_meta(&dir.join(format!("runs/seed-{seed}/adversarial"))).map_err(|e| e.to_string())?.epsilon;
        for d in linf_per_image(&adv.images, &clean.images) {
            total += 1;
            worst = worst.max(d);
            if d <= eps + 1.0 / 255.0 + 1e-6 {
                within += 1;
            }
        }
    }
    let runs = cfg.seeds().len();
    Ok((
        identical == runs && within == total,
        format!("{identical}/{runs} reloaded reports identical; {within}/{total} images within eps + 1/255 (max {worst:.5})"),
    ))
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let needs_rig = [2, 4, 5, 6, 8, 9, 10].iter().any(|&n| wanted(n));
    let ctx = needs_rig.then(|| Ctx { rig: common::desk_rig(), identity_adv: OnceCell::new() });
    let ctx = || ctx.as_ref().expect("rig loaded");

    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Check + '_>)> = vec![
        (1, "geometry oracles", Box::new(c1_geometry)),
        (2, "attack invariants", Box::new(|| c2_attack(ctx()))),
        (3, "kNN-overlap oracle", Box::new(c3_knn)),
        (4, "alignment ordering", Box::new(|| c4_alignment(ctx()))),
        (5, "S4ST > Base > identity", Box::new(|| c5_ordering(ctx()))),
        (6, "scaling beats color", Box::new(|| c6_ranking(ctx()))),
        (7, "PCC machinery", Box::new(c7_pcc)),
        (8, "tuning sanity", Box::new(|| c8_tuning(ctx()))),
        (9, "efficiency", Box::new(|| c9_overhead(ctx()))),
        (10, "persistence round-trip", Box::new(c10_persistence)),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
