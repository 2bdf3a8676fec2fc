//! Targeted and untargeted success rates against black-box victims.

use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use s4st_core::Classifier;

use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::zoo::Preprocessing;

/// A forward-only model plus the input contract it was trained under.
pub struct Victim<'a> {
    pub model_id: String,
    pub preprocessing: Preprocessing,
    pub model: &'a dyn Classifier<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimReport {
    pub model_id: String,
    /// Percentage of samples predicted as their target label.
    pub tsuc: f64,
    /// Percentage of clean-correct samples that are misclassified.
    pub usuc: f64,
    pub samples: usize,
    pub targeted_hits: usize,
    pub misclassified: usize,
    pub clean_correct: usize,
    pub broken: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub victims: Vec<VictimReport>,
    pub avg_tsuc: f64,
    pub avg_usuc: f64,
    /// Attack wall-clock per image, when known.
    pub seconds_per_image: Option<f64>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn victim(&self, model_id: &str) -> Option<&VictimReport> {
        self.victims.iter().find(|v| v.model_id == model_id)
    }
}

fn predict_batched(model: &dyn Classifier<f32>, x: &Array4<f32>) -> Result<Vec<usize>> {
    let n = x.len_of(Axis(0));
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(100) {
        let end = (start + 100).min(n);
        out.extend(model.predict(&x.slice(s![start..end, .., .., ..]).to_owned())?);
    }
    Ok(out)
}

/// Scores `x_adv` against every victim. Clean predictions come from the
/// images in `clean`, labels and targets from its manifest.
pub fn evaluate(victims: &[Victim<'_>], x_adv: &Array4<f32>, clean: &Dataset) -> Result<EvalReport> {
    let (n, _, h, w) = x_adv.dim();
    if clean.images.dim() != x_adv.dim() || clean.manifest.len() != n {
        return Err(invalid(format!("adversarial batch {:?} does not match the dataset {:?}", x_adv.dim(), clean.images.dim())));
    }
    if victims.is_empty() {
        return Err(invalid("no victims to evaluate"));
    }
    let labels = clean.manifest.true_labels();
    let targets = clean.manifest.targets();
    let mut reports = Vec::new();
    for v in victims {
        if v.preprocessing.image_size != (h, w) {
            return Err(invalid(format!(
                "victim {} expects {:?} inputs but the batch is {h}x{w}",
                v.model_id, v.preprocessing.image_size
            )));
        }
        let clean_pred = predict_batched(v.model, &clean.images)?;
        let adv_pred = predict_batched(v.model, x_adv)?;
        reports.push(tally(&v.model_id, &clean_pred, &adv_pred, &labels, &targets));
    }
    let count = reports.len() as f64;
    Ok(EvalReport {
        avg_tsuc: reports.iter().map(|r| r.tsuc).sum::<f64>() / count,
        avg_usuc: reports.iter().map(|r| r.usuc).sum::<f64>() / count,
        victims: reports,
        seconds_per_image: None,
        config: serde_json::Value::Null,
    })
}

/// Counts for one victim from its clean and adversarial predictions.
pub fn tally(model_id: &str, clean_pred: &[usize], adv_pred: &[usize], labels: &[usize], targets: &[usize]) -> VictimReport {
    let n = labels.len();
    let mut r = VictimReport {
        model_id: model_id.to_string(),
        tsuc: 0.0,
        usuc: 0.0,
        samples: n,
        targeted_hits: 0,
        misclassified: 0,
        clean_correct: 0,
        broken: 0,
    };
    for i in 0..n {
        r.targeted_hits += usize::from(adv_pred[i] == targets[i]);
        r.misclassified += usize::from(adv_pred[i] != labels[i]);
        if clean_pred[i] == labels[i] {
            r.clean_correct += 1;
            r.broken += usize::from(adv_pred[i] != labels[i]);
        }
    }
    r.tsuc = 100.0 * r.targeted_hits as f64 / n.max(1) as f64;
    r.usuc = if r.clean_correct == 0 { 0.0 } else { 100.0 * r.broken as f64 / r.clean_correct as f64 };
    r
}
