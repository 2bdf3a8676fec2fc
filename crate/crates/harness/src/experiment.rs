//! Declarative experiments: attack, evaluate, estimate, plot.
//!
//! An experiment named `name` writes under `<artifact root>/<name>/`:
//!
//! ```text
//! config.json                      resolved configuration
//! dataset/                         clean inputs (PNG + manifest.csv), when drawn from the rig
//! runs/seed-<s>/adversarial/       adv_XXXX.png, manifest.csv, meta.json
//! runs/seed-<s>/eval_report.json   EvalReport (deterministic; no timings)
//! runs/seed-<s>/timing.json        attack wall-clock
//! runs/seed-<s>/curve.json         tSuc against iteration and time
//! runs/seed-<s>/metrics/*.json     estimator reports, as configured
//! summary.json                     per-seed and mean success rates
//! ablation.json, ablation.md       four-row component table (if requested)
//! intensity_response.json          sweep results (if requested)
//! metrics/st_table.json, pcc.json  self-transferability table and PCCs (sweep + self_transfer)
//! plots/*.svg                      tsuc_vs_iteration, tsuc_vs_time, intensity_response, pcc_heatmap
//! report.md                        human-readable digest
//! FAILED                           stage name and error, only after a failure
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use s4st_core::analysis::{pcc_matrix, PccMatrix, STTable};
use s4st_core::estimators::{
    self, attention_deviation, blackbox_transferability, default_k, diversity_metric, extract_representations,
    gradient_magnitude_metric, knn_overlap_alignment, InputTag, MetricReport, CAM_THRESHOLD,
};
use s4st_core::transform_kit::{enumerate_variants, intensity_grid, TwoAxisLattice};
use s4st_core::{attack, parse_transform, AttackConfig, Classifier, Network, S4STParams, TransformKind};

use crate::dataset::{self, Dataset, DatasetManifest, ManifestEntry};
use crate::desk;
use crate::error::{invalid, HarnessError, Result};
use crate::eval::{evaluate, EvalReport, Victim};
use crate::persist::{self, AdversarialMeta};
use crate::plot::{self, Series};
use crate::rig::{self, Rig, RigSpec};

pub const ARTIFACT_ROOT_ENV: &str = "S4ST_ARTIFACT_ROOT";
pub const FAILURE_MARKER: &str = "FAILED";

/// Artifact root from the environment, defaulting to `./artifacts`.
pub fn artifact_root() -> PathBuf {
    std::env::var_os(ARTIFACT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("artifacts"))
}

pub fn s4st_id(p: &S4STParams) -> String {
    format!("s4st[{},{},{},{}]", p.p_r, p.r, p.p_aug, p.m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSource {
    /// Rig directory; defaults to `<artifact root>/rig`.
    pub dir: Option<PathBuf>,
    pub spec: RigSpec,
}

impl Default for RigSource {
    fn default() -> Self {
        Self { dir: None, spec: RigSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub self_transfer: bool,
    pub blackbox: bool,
    pub alignment: bool,
    pub consensus: bool,
    /// Intensity samples per kind for self-transferability.
    pub grid_points: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { self_transfer: false, blackbox: true, alignment: false, consensus: false, grid_points: 5 }
    }
}

/// Attacks repeated with `template` (containing `{s}`) at every value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub template: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub rig: RigSource,
    /// Clean dataset manifest; when absent, `images` samples are drawn from
    /// the rig's held-out corpus.
    pub dataset: Option<PathBuf>,
    pub images: Option<usize>,
    /// Surrogate model ids; empty means the rig's surrogate.
    pub surrogates: Vec<String>,
    /// Victim model ids; empty means every victim of the rig.
    pub victims: Vec<String>,
    pub attack: AttackConfig,
    /// When set, replaces the parameters of an `s4st` transform id.
    pub s4st: Option<S4STParams>,
    /// Empty means `[attack.seed]`.
    pub seeds: Vec<u64>,
    /// Record tSuc every this many iterations; 0 disables the curves.
    pub curve_every: usize,
    pub estimators: EstimatorConfig,
    pub ablation: bool,
    pub sweep: Option<Sweep>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            rig: RigSource::default(),
            dataset: None,
            images: None,
            surrogates: Vec::new(),
            victims: Vec::new(),
            attack: desk::attack_config(),
            s4st: None,
            seeds: Vec::new(),
            curve_every: 10,
            estimators: EstimatorConfig::default(),
            ablation: false,
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.attack.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Attack transform id with any `s4st` override applied.
    pub fn transform_id(&self) -> String {
        match &self.s4st {
            Some(p) if self.attack.transform_id.starts_with("s4st") => {
                let suffix = if self.attack.transform_id.ends_with(":global") { ":global" } else { "" };
                format!("{}{suffix}", s4st_id(p))
            }
            _ => self.attack.transform_id.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == ".." {
            return Err(invalid(format!("experiment name `{}` is not a plain directory name", self.name)));
        }
        self.attack.validate()?;
        parse_transform::<f32>(&self.transform_id())?;
        if let Some(p) = &self.s4st {
            p.validate()?;
        }
        if let Some(sw) = &self.sweep {
            if !sw.template.contains("{s}") || sw.values.is_empty() {
                return Err(invalid("sweep needs a template containing `{s}` and at least one value"));
            }
        }
        if self.estimators.grid_points == 0 {
            return Err(invalid("grid_points must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = &cfg.dataset {
            if d.is_relative() {
                cfg.dataset = Some(base.join(d));
            }
        }
        if let Some(d) = &cfg.rig.dir {
            if d.is_relative() {
                cfg.rig.dir = Some(base.join(d));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Attack time so far, excluding the time spent measuring.
    pub seconds: f64,
    pub tsuc: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub attack_seconds: f64,
    pub seconds_per_image: f64,
    pub seconds_per_iteration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub avg_tsuc: f64,
    pub avg_usuc: f64,
    pub tsuc: BTreeMap<String, f64>,
    pub usuc: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub transform_id: String,
    pub runs: Vec<SeedSummary>,
    pub mean_avg_tsuc: f64,
    pub mean_avg_usuc: f64,
    pub mean_tsuc: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub row: String,
    pub params: S4STParams,
    /// Victim id → tSuc averaged over seeds.
    pub tsuc: BTreeMap<String, f64>,
    pub avg_tsuc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub transform_id: String,
    pub avg_tsuc: f64,
    pub tsuc: BTreeMap<String, f64>,
    /// Surrogate self-transferability per basic kind, when requested.
    pub self_transfer: Option<BTreeMap<String, f64>>,
    pub blackbox: f64,
}

/// Models and data resolved for one experiment.
pub struct Workspace<'r> {
    pub rig: &'r Rig,
    pub surrogates: Vec<&'r Network<f32>>,
    pub victims: Vec<Victim<'r>>,
    pub clean: Dataset,
}

impl<'r> Workspace<'r> {
    pub fn new(rig: &'r Rig, cfg: &ExperimentConfig, clean: Dataset) -> Result<Self> {
        let surrogates = if cfg.surrogates.is_empty() {
            vec![rig.surrogate().1]
        } else {
            cfg.surrogates.iter().map(|id| rig.model(id).map(|m| m.1)).collect::<Result<Vec<_>>>()?
        };
        let mut victims = rig.victim_handles();
        if !cfg.victims.is_empty() {
            for id in &cfg.victims {
                rig.model(id)?;
            }
            victims.retain(|v| cfg.victims.contains(&v.model_id));
        }
        Ok(Self { rig, surrogates, victims, clean })
    }

    pub fn victim_models(&self) -> Vec<&dyn Classifier<f32>> {
        self.victims.iter().map(|v| v.model).collect()
    }

    /// Runs the attack with `transform_id`; tSuc is sampled every
    /// `curve_every` iterations when positive.
    pub fn attack(&self, config: &AttackConfig, transform_id: &str, curve_every: usize) -> Result<(s4st_core::AttackResult<f32>, Vec<CurvePoint>, RunTiming)> {
        let transform = parse_transform::<f32>(transform_id)?;
        let targets = self.clean.manifest.targets();
        let mut curve = Vec::new();
        let mut failure = None;
        let mut measuring = 0.0;
        let start = Instant::now();
        let result = attack::tmi_attack_observed(&self.surrogates, &self.clean.images, &targets, config, transform.as_ref(), &mut |t, x_adv| {
            if curve_every == 0 || (t % curve_every != 0 && t != config.iterations) || failure.is_some() {
                return;
            }
            let probe = Instant::now();
            let mut tsuc = BTreeMap::new();
            for v in &self.victims {
                match v.model.predict(x_adv) {
                    Ok(pred) => {
                        let hits = pred.iter().zip(&targets).filter(|(p, t)| p == t).count();
                        tsuc.insert(v.model_id.clone(), 100.0 * hits as f64 / targets.len() as f64);
                    }
                    Err(e) => failure = Some(e),
                }
            }
            measuring += probe.elapsed().as_secs_f64();
            curve.push(CurvePoint { iteration: t, seconds: start.elapsed().as_secs_f64() - measuring, tsuc });
        })?;
        if let Some(e) = failure {
            return Err(e.into());
        }
        let attack_seconds = start.elapsed().as_secs_f64() - measuring;
        let n = targets.len().max(1) as f64;
        let timing = RunTiming {
            attack_seconds,
            seconds_per_image: attack_seconds / n,
            seconds_per_iteration: attack_seconds / config.iterations as f64,
        };
        Ok((result, curve, timing))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn stage<T>(dir: &Path, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| {
        let _ = fs::create_dir_all(dir);
        let _ = fs::write(dir.join(FAILURE_MARKER), format!("stage: {name}\nerror: {e}\n"));
        HarnessError::Stage { stage: name.to_string(), source: Box::new(e) }
    })
}

/// Clean inputs for `cfg`: the configured manifest, or a fresh draw from
/// the rig's held-out corpus written to `dir/dataset`.
pub fn resolve_dataset(cfg: &ExperimentConfig, spec: &RigSpec, dir: &Path) -> Result<Dataset> {
    let size = (spec.image_size, spec.image_size);
    let mut ds = match &cfg.dataset {
        Some(path) => dataset::load_dataset(path, size, spec.class_count)?,
        None => {
            let (x, y, t) = spec.eval_corpus(cfg.images.unwrap_or(64));
            let path = dataset::write_dataset(&dir.join("dataset"), "img", &x, &y, &t)?;
            dataset::load_dataset(&path, size, spec.class_count)?
        }
    };
    if let Some(n) = cfg.images {
        if n == 0 {
            return Err(invalid("an experiment needs at least one image"));
        }
        let n = n.min(ds.manifest.len());
        ds.manifest.entries.truncate(n);
        ds.images = ds.images.slice(s![..n, .., .., ..]).to_owned();
    }
    Ok(ds)
}

fn seed_summary(seed: u64, report: &EvalReport) -> SeedSummary {
    SeedSummary {
        seed,
        avg_tsuc: report.avg_tsuc,
        avg_usuc: report.avg_usuc,
        tsuc: report.victims.iter().map(|v| (v.model_id.clone(), v.tsuc)).collect(),
        usuc: report.victims.iter().map(|v| (v.model_id.clone(), v.usuc)).collect(),
    }
}

fn mean_maps(maps: &[&BTreeMap<String, f64>]) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for m in maps {
        for (k, v) in m.iter() {
            *out.entry(k.clone()).or_default() += v / maps.len() as f64;
        }
    }
    out
}

/// Estimator reports for one set of adversarial examples.
pub fn estimate(ws: &Workspace<'_>, cfg: &ExperimentConfig, x_adv: &Array4<f32>, result: Option<&s4st_core::AttackResult<f32>>, seed: u64) -> Result<BTreeMap<String, serde_json::Value>> {
    let est = &cfg.estimators;
    let x = &ws.clean.images;
    let targets = ws.clean.manifest.targets();
    let labels = ws.clean.manifest.true_labels();
    let surrogate = ws.surrogates[0];
    let mut out = BTreeMap::new();
    if est.blackbox {
        let report = blackbox_transferability(&ws.victim_models(), x_adv, x, &targets)?;
        out.insert("blackbox".to_string(), serde_json::to_value(report)?);
    }
    if est.self_transfer {
        let grid = intensity_grid(est.grid_points)?;
        let reports = TransformKind::ALL
            .iter()
            .map(|&kind| {
                estimators::self_transferability_with(surrogate, kind, x_adv, x, &targets, &grid, TwoAxisLattice::new(estimators::DEFAULT_LATTICE_SEED))
            })
            .collect::<s4st_core::Result<Vec<MetricReport>>>()?;
        out.insert("self_transfer".to_string(), serde_json::to_value(reports)?);
    }
    if est.alignment {
        out.insert("alignment".to_string(), serde_json::to_value(alignment_reports(ws, x_adv)?)?);
    }
    if est.consensus {
        let mut reports = Vec::new();
        let transform = parse_transform::<f32>(&cfg.transform_id())?;
        reports.push(diversity_metric(surrogate, transform.as_ref(), x, &labels, seed)?);
        let mut per_kind = Vec::new();
        for kind in TransformKind::ALL {
            let variant = enumerate_variants(kind, 0.5, Some((0.5, 0.5)))?.remove(0);
            let mut total = 0.0;
            for (i, img) in x.axis_iter(Axis(0)).enumerate() {
                total += attention_deviation(surrogate, img, &variant, labels[i], CAM_THRESHOLD)?;
            }
            per_kind.push(total / labels.len() as f64);
        }
        reports.push(MetricReport::new("attention_deviation", per_kind)?.with("kinds", TransformKind::ALL.map(|k| k.name()).join(",")).with("intensity", 0.5));
        if let Some(r) = result {
            reports.push(MetricReport::new("gradient_magnitude", r.grad_norm_trace.clone())?.with("mean", gradient_magnitude_metric(r)?));
        }
        out.insert("consensus".to_string(), serde_json::to_value(reports)?);
    }
    Ok(out)
}

/// kNN-overlap alignment between clean surrogate features and each
/// victim's, and between adversarial and clean surrogate features.
pub fn alignment_reports(ws: &Workspace<'_>, x_adv: &Array4<f32>) -> Result<Vec<MetricReport>> {
    let x = &ws.clean.images;
    let n = x.len_of(Axis(0));
    let k = default_k(n).max(1);
    let surrogate = ws.surrogates[0];
    let phi = extract_representations(surrogate, "surrogate", x, InputTag::Clean)?;
    let phi_adv = extract_representations(surrogate, "surrogate", x_adv, InputTag::Adversarial)?;
    let mut cross = Vec::new();
    let mut ids = Vec::new();
    for (entry, net) in ws.rig.victims() {
        if !ws.victims.iter().any(|v| v.model_id == entry.model_id) {
            continue;
        }
        let psi = extract_representations(net, &entry.model_id, x, InputTag::Clean)?;
        cross.push(knn_overlap_alignment(&phi, &psi, k)?);
        ids.push(entry.model_id.clone());
    }
    let adv = knn_overlap_alignment(&phi_adv, &phi, k)?;
    Ok(vec![
        MetricReport::new("alignment_surrogate_victims", cross)?.with("victims", ids.join(",")).with("k", k),
        MetricReport::new("alignment_adversarial_clean", vec![adv])?.with("k", k),
    ])
}

/// Runs a configuration file; see the module docs for the layout.
pub fn run_experiment(config_path: &Path) -> Result<PathBuf> {
    let cfg = ExperimentConfig::load(config_path)?;
    run_experiment_in(&cfg, &artifact_root())
}

pub fn run_experiment_in(cfg: &ExperimentConfig, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&cfg.name);
    fs::create_dir_all(&dir)?;
    let _ = fs::remove_file(dir.join(FAILURE_MARKER));
    stage(&dir, "config", || {
        cfg.validate()?;
        write_json(&dir.join("config.json"), cfg)
    })?;
    let rig = stage(&dir, "rig", || {
        let rig_dir = cfg.rig.dir.clone().unwrap_or_else(|| root.join("rig"));
        rig::load_or_build(&cfg.rig.spec, &rig_dir)
    })?;
    let clean = stage(&dir, "dataset", || resolve_dataset(cfg, &rig.manifest.spec, &dir))?;
    let ws = stage(&dir, "models", || Workspace::new(&rig, cfg, clean))?;
    let transform_id = cfg.transform_id();
    let config_echo = serde_json::to_value(cfg)?;

    let mut runs = Vec::new();
    let mut first_curve = Vec::new();
    for seed in cfg.seeds() {
        let run_dir = dir.join("runs").join(format!("seed-{seed}"));
        let attack_cfg = AttackConfig { seed, ..cfg.attack.clone() };
        let (result, curve, timing) = stage(&dir, "attack", || ws.attack(&attack_cfg, &transform_id, cfg.curve_every))?;
        let adv = stage(&dir, "persist", || {
            let meta = AdversarialMeta {
                epsilon: attack_cfg.epsilon,
                max_linf: 0.0,
                attack: serde_json::json!({ "config": attack_cfg, "transform_id": transform_id }),
                grad_norm_trace: result.grad_norm_trace.clone(),
                loss_trace: result.loss_trace.clone(),
            };
            let manifest = persist::save_adversarial(&run_dir.join("adversarial"), &result.x_adv, &ws.clean, meta)?;
            write_json(&run_dir.join("timing.json"), &timing)?;
            write_json(&run_dir.join("curve.json"), &curve)?;
            persist::load_adversarial(&manifest, &ws.clean)
        })?;
        let report = stage(&dir, "evaluate", || {
            let mut report = evaluate(&ws.victims, &adv.images, &ws.clean)?;
            report.config = serde_json::json!({ "experiment": config_echo, "seed": seed });
            write_json(&run_dir.join("eval_report.json"), &report)?;
            Ok(report)
        })?;
        stage(&dir, "estimate", || {
            for (name, value) in estimate(&ws, cfg, &adv.images, Some(&result), seed)? {
                write_json(&run_dir.join("metrics").join(format!("{name}.json")), &value)?;
            }
            Ok(())
        })?;
        if first_curve.is_empty() {
            first_curve = curve;
        }
        runs.push(seed_summary(seed, &report));
    }
    let summary = Summary {
        transform_id: transform_id.clone(),
        mean_avg_tsuc: runs.iter().map(|r| r.avg_tsuc).sum::<f64>() / runs.len() as f64,
        mean_avg_usuc: runs.iter().map(|r| r.avg_usuc).sum::<f64>() / runs.len() as f64,
        mean_tsuc: mean_maps(&runs.iter().map(|r| &r.tsuc).collect::<Vec<_>>()),
        runs,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    stage(&dir, "plots", || curve_plots(&dir, &first_curve))?;

    if cfg.ablation {
        let rows = stage(&dir, "ablation", || ablation(&ws, cfg))?;
        write_json(&dir.join("ablation.json"), &rows)?;
        fs::write(dir.join("ablation.md"), ablation_markdown(&rows))?;
    }
    if let Some(sweep) = &cfg.sweep {
        let points = stage(&dir, "sweep", || run_sweep(&ws, cfg, sweep))?;
        write_json(&dir.join("intensity_response.json"), &points)?;
        stage(&dir, "sweep-plots", || sweep_outputs(&dir, sweep, &points))?;
    }
    stage(&dir, "report", || report(&dir))?;
    Ok(dir)
}

fn curve_plots(dir: &Path, curve: &[CurvePoint]) -> Result<()> {
    let victims: Vec<String> = curve.first().map(|p| p.tsuc.keys().cloned().collect()).unwrap_or_default();
    let series = |x: &dyn Fn(&CurvePoint) -> f64| -> Vec<Series> {
        victims
            .iter()
            .map(|v| Series { label: v.clone(), points: curve.iter().map(|p| (x(p), p.tsuc[v])).collect() })
            .collect()
    };
    plot::write(&dir.join("plots/tsuc_vs_iteration.svg"), &plot::line_chart("tSuc against iteration", "iteration", "tSuc (%)", &series(&|p| p.iteration as f64)))?;
    plot::write(&dir.join("plots/tsuc_vs_time.svg"), &plot::line_chart("tSuc against attack time", "seconds", "tSuc (%)", &series(&|p| p.seconds)))?;
    Ok(())
}

/// Base, Base+Aug, Base+Block and full S4ST, each over every seed.
pub fn ablation(ws: &Workspace<'_>, cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let full = cfg.s4st.unwrap_or(desk::S4ST_FULL);
    let mut rows = Vec::new();
    for (name, params) in desk::ABLATION_ROWS.iter().zip(desk::ablation_params(&full)) {
        let mut per_seed = Vec::new();
        for seed in cfg.seeds() {
            let attack_cfg = AttackConfig { seed, ..cfg.attack.clone() };
            let (res, _, _) = ws.attack(&attack_cfg, &s4st_id(&params), 0)?;
            per_seed.push(evaluate(&ws.victims, &res.x_adv, &ws.clean)?);
        }
        let maps: Vec<BTreeMap<String, f64>> =
            per_seed.iter().map(|r| r.victims.iter().map(|v| (v.model_id.clone(), v.tsuc)).collect()).collect();
        let tsuc = mean_maps(&maps.iter().collect::<Vec<_>>());
        let avg_tsuc = tsuc.values().sum::<f64>() / tsuc.len().max(1) as f64;
        rows.push(AblationRow { row: name.to_string(), params, tsuc, avg_tsuc });
    }
    Ok(rows)
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let victims: Vec<String> = rows.first().map(|r| r.tsuc.keys().cloned().collect()).unwrap_or_default();
    let mut md = format!("| Method | [p_r, r, p_aug, m] | {} | Avg. |\n", victims.join(" | "));
    md += &format!("|---|---|{}---|\n", "---|".repeat(victims.len()));
    for r in rows {
        let cells: Vec<String> = victims.iter().map(|v| format!("{:.1}", r.tsuc[v])).collect();
        md += &format!(
            "| {} | [{}, {}, {}, {}] | {} | {:.1} |\n",
            r.row, r.params.p_r, r.params.r, r.params.p_aug, r.params.m, cells.join(" | "), r.avg_tsuc
        );
    }
    md
}

fn run_sweep(ws: &Workspace<'_>, cfg: &ExperimentConfig, sweep: &Sweep) -> Result<Vec<SweepPoint>> {
    let grid = intensity_grid(cfg.estimators.grid_points)?;
    let targets = ws.clean.manifest.targets();
    let mut points = Vec::new();
    for &value in &sweep.values {
        let id = sweep.template.replace("{s}", &value.to_string());
        let seed = cfg.seeds()[0];
        let attack_cfg = AttackConfig { seed, ..cfg.attack.clone() };
        let (res, _, _) = ws.attack(&attack_cfg, &id, 0)?;
        let report = evaluate(&ws.victims, &res.x_adv, &ws.clean)?;
        let self_transfer = if cfg.estimators.self_transfer {
            let mut m = BTreeMap::new();
            for kind in TransformKind::ALL {
                m.insert(kind.name().to_string(), estimators::self_transferability(ws.surrogates[0], kind, &res.x_adv, &ws.clean.images, &targets, &grid)?);
            }
            Some(m)
        } else {
            None
        };
        let blackbox = blackbox_transferability(&ws.victim_models(), &res.x_adv, &ws.clean.images, &targets)?.value;
        points.push(SweepPoint {
            value,
            transform_id: id,
            avg_tsuc: report.avg_tsuc,
            tsuc: report.victims.iter().map(|v| (v.model_id.clone(), v.tsuc)).collect(),
            self_transfer,
            blackbox,
        });
    }
    Ok(points)
}

/// Self-transferability table with a trailing black-box column, one row per
/// sweep point.
pub fn st_table(points: &[SweepPoint]) -> Result<STTable> {
    let mut columns: Vec<String> = TransformKind::ALL.iter().map(|k| k.name().to_string()).collect();
    columns.push("blackbox".into());
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for p in points {
        let st = p.self_transfer.as_ref().ok_or_else(|| invalid("sweep point lacks self-transferability"))?;
        let mut row: Vec<f64> = TransformKind::ALL.iter().map(|k| st[k.name()]).collect();
        row.push(p.blackbox);
        rows.push(row);
        labels.push(p.transform_id.clone());
    }
    Ok(STTable::new(labels, columns, rows)?)
}

fn sweep_outputs(dir: &Path, sweep: &Sweep, points: &[SweepPoint]) -> Result<()> {
    let victims: Vec<String> = points.first().map(|p| p.tsuc.keys().cloned().collect()).unwrap_or_default();
    let mut series: Vec<Series> =
        victims.iter().map(|v| Series { label: v.clone(), points: points.iter().map(|p| (p.value, p.tsuc[v])).collect() }).collect();
    series.push(Series { label: "average".into(), points: points.iter().map(|p| (p.value, p.avg_tsuc)).collect() });
    plot::write(&dir.join("plots/intensity_response.svg"), &plot::line_chart(&format!("tSuc of {}", sweep.template), "intensity", "tSuc (%)", &series))?;
    if points.len() >= 3 && points.iter().all(|p| p.self_transfer.is_some()) {
        let table = st_table(points)?;
        let matrix: PccMatrix = pcc_matrix(&table)?;
        write_json(&dir.join("metrics/st_table.json"), &table)?;
        write_json(&dir.join("metrics/pcc.json"), &matrix)?;
        plot::write(&dir.join("plots/pcc_heatmap.svg"), &plot::heatmap("PCC of self-transferability", &matrix.labels, &matrix.values))?;
    }
    Ok(())
}

/// Writes `report.md` from the artifacts already in `dir`.
pub fn report(dir: &Path) -> Result<String> {
    let summary: Summary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    let mut md = format!("# {}\n\nTransform: `{}`\n\n", dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), summary.transform_id);
    md += "| Seed | Victim | tSuc (%) | uSuc (%) |\n|---|---|---|---|\n";
    for run in &summary.runs {
        for (v, t) in &run.tsuc {
            md += &format!("| {} | {} | {:.1} | {:.1} |\n", run.seed, v, t, run.usuc[v]);
        }
    }
    md += &format!("\nMean tSuc over seeds and victims: {:.2}%; mean uSuc: {:.2}%\n", summary.mean_avg_tsuc, summary.mean_avg_usuc);
    if let Ok(ablation) = fs::read_to_string(dir.join("ablation.md")) {
        md += "\n## Ablation\n\n";
        md += &ablation;
    }
    if let Ok(text) = fs::read_to_string(dir.join("intensity_response.json")) {
        let points: Vec<SweepPoint> = serde_json::from_str(&text)?;
        md += "\n## Intensity response\n\n| Transform | Avg. tSuc (%) | Black-box gain |\n|---|---|---|\n";
        for p in &points {
            md += &format!("| `{}` | {:.1} | {:.4} |\n", p.transform_id, p.avg_tsuc, p.blackbox);
        }
    }
    let mut plots: Vec<String> = fs::read_dir(dir.join("plots"))
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    plots.sort();
    if !plots.is_empty() {
        md += "\n## Plots\n\n";
        for p in plots {
            md += &format!("- plots/{p}\n");
        }
    }
    fs::write(dir.join("report.md"), &md)?;
    Ok(md)
}

/// Files `run_experiment` promises for `cfg`, relative to its directory.
pub fn declared_files(cfg: &ExperimentConfig) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = ["config.json", "summary.json", "report.md", "plots/tsuc_vs_iteration.svg", "plots/tsuc_vs_time.svg"]
        .iter()
        .map(PathBuf::from)
        .collect();
    if cfg.dataset.is_none() {
        files.push("dataset/manifest.csv".into());
    }
    for seed in cfg.seeds() {
        let run = PathBuf::from("runs").join(format!("seed-{seed}"));
        for f in ["adversarial/manifest.csv", "adversarial/meta.json", "eval_report.json", "timing.json", "curve.json"] {
            files.push(run.join(f));
        }
        let est = &cfg.estimators;
        for (on, name) in [(est.blackbox, "blackbox"), (est.self_transfer, "self_transfer"), (est.alignment, "alignment"), (est.consensus, "consensus")] {
            if on {
                files.push(run.join("metrics").join(format!("{name}.json")));
            }
        }
    }
    if cfg.ablation {
        files.push("ablation.json".into());
        files.push("ablation.md".into());
    }
    if let Some(sw) = &cfg.sweep {
        files.push("intensity_response.json".into());
        files.push("plots/intensity_response.svg".into());
        if sw.values.len() >= 3 && cfg.estimators.self_transfer {
            files.push("plots/pcc_heatmap.svg".into());
            files.push("metrics/pcc.json".into());
        }
    }
    files
}

/// Configuration, rig and clean inputs of an existing experiment directory.
pub fn open_experiment(experiment_dir: &Path) -> Result<(ExperimentConfig, Rig, Dataset)> {
    let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(experiment_dir.join("config.json"))?)?;
    let root = experiment_dir.parent().unwrap_or(Path::new("."));
    let rig_dir = cfg.rig.dir.clone().unwrap_or_else(|| root.join("rig"));
    let rig = rig::load_rig(&rig_dir)?;
    let spec = rig.manifest.spec.clone();
    let clean = match &cfg.dataset {
        Some(_) => resolve_dataset(&cfg, &spec, experiment_dir)?,
        None => {
            let mut ds = dataset::load_dataset(&experiment_dir.join("dataset/manifest.csv"), (spec.image_size, spec.image_size), spec.class_count)?;
            if let Some(n) = cfg.images {
                let n = n.min(ds.manifest.len());
                ds.manifest.entries.truncate(n);
                ds.images = ds.images.slice(s![..n, .., .., ..]).to_owned();
            }
            ds
        }
    };
    Ok((cfg, rig, clean))
}

/// Persisted adversarial examples of one run.
pub fn load_run(experiment_dir: &Path, seed: u64, clean: &Dataset) -> Result<Dataset> {
    let manifest = experiment_dir.join("runs").join(format!("seed-{seed}")).join("adversarial/manifest.csv");
    persist::load_adversarial(&manifest, clean)
}

/// Re-evaluates the persisted adversarial examples of one run.
pub fn reevaluate(experiment_dir: &Path, seed: u64) -> Result<EvalReport> {
    let (cfg, rig, clean) = open_experiment(experiment_dir)?;
    let ws = Workspace::new(&rig, &cfg, clean)?;
    let adv = load_run(experiment_dir, seed, &ws.clean)?;
    let mut report = evaluate(&ws.victims, &adv.images, &ws.clean)?;
    report.config = serde_json::json!({ "experiment": serde_json::to_value(&cfg)?, "seed": seed });
    Ok(report)
}

/// Dataset built from in-memory arrays (no files behind the entries).
pub fn in_memory_dataset(images: Array4<f32>, labels: &[usize], targets: &[usize], class_count: usize) -> Dataset {
    let (_, _, h, w) = images.dim();
    let entries = labels
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (&y, &t))| ManifestEntry { image_path: format!("mem_{i:04}"), true_label: y, target_label: t })
        .collect();
    Dataset { manifest: DatasetManifest { entries, image_size: (h, w), class_count, root: PathBuf::new() }, images }
}
