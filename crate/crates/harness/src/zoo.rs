//! Architectures of the desk rig and their training loop.

use ndarray::{s, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use s4st_core::nn::{softmax_rows, Conv2d, Layer, Linear};
use s4st_core::ops::{Rect, SampleMap};
use s4st_core::Network;

use crate::error::{invalid, Result};

pub const ARCHITECTURES: [&str; 3] = ["cnn-a", "cnn-b", "patchnet"];

/// Normalization constants folded into every network's first layer.
pub const NORM_MEAN: [f32; 3] = [0.5, 0.5, 0.5];
pub const NORM_STD: [f32; 3] = [0.25, 0.25, 0.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Surrogate,
    Victim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Expected input `(H, W)`.
    pub image_size: (usize, usize),
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelZooEntry {
    pub model_id: String,
    pub arch: String,
    pub role: Role,
    /// Weights file, relative to the rig directory.
    pub weights: String,
    pub preprocessing: Preprocessing,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub model_id: String,
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

fn conv(i: usize, o: usize, k: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Layer<f32> {
    Layer::Conv2d(Conv2d::new(i, o, k, stride, pad, rng))
}

fn linear(i: usize, o: usize, rng: &mut ChaCha8Rng) -> Layer<f32> {
    Layer::Linear(Linear::new(i, o, rng))
}

/// Freshly initialized network for `arch`.
pub fn build_architecture(arch: &str, classes: usize, rng: &mut ChaCha8Rng) -> Result<Network<f32>> {
    let mut layers = vec![Layer::Normalize { mean: NORM_MEAN, std: NORM_STD }];
    match arch {
        "cnn-a" => layers.extend([
            conv(3, 16, 3, 1, 1, rng),
            Layer::Relu,
            Layer::MaxPool2,
            conv(16, 32, 3, 1, 1, rng),
            Layer::Relu,
            Layer::MaxPool2,
            conv(32, 64, 3, 1, 1, rng),
            Layer::Relu,
            Layer::GlobalAvgPool,
            linear(64, classes, rng),
        ]),
        "cnn-b" => layers.extend([
            conv(3, 12, 5, 1, 2, rng),
            Layer::Relu,
            Layer::AvgPool2,
            conv(12, 24, 3, 1, 1, rng),
            Layer::Relu,
            conv(24, 48, 3, 1, 1, rng),
            Layer::Relu,
            Layer::MaxPool2,
            conv(48, 64, 3, 1, 1, rng),
            Layer::Relu,
            Layer::GlobalAvgPool,
            linear(64, 48, rng),
            Layer::Relu,
            linear(48, classes, rng),
        ]),
        "patchnet" => layers.extend([
            conv(3, 32, 4, 2, 1, rng),
            Layer::Relu,
            conv(32, 48, 3, 2, 1, rng),
            Layer::Relu,
            conv(48, 64, 3, 1, 1, rng),
            Layer::Relu,
            Layer::GlobalAvgPool,
            linear(64, classes, rng),
        ]),
        other => return Err(invalid(format!("unknown architecture `{other}`; known: {}", ARCHITECTURES.join(", ")))),
    }
    Ok(Network::new(arch, classes, layers)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Lower bound of the random-resized-crop area fraction.
    pub min_crop_area: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 12, batch_size: 32, learning_rate: 0.05, momentum: 0.9, weight_decay: 5e-4, min_crop_area: 0.5 }
    }
}

/// Random-resized crop plus horizontal flip, output at the input size.
fn augment(image: ndarray::ArrayView3<f32>, min_area: f64, rng: &mut ChaCha8Rng) -> ndarray::Array3<f32> {
    let (_, h, w) = image.dim();
    let area = rng.random_range(min_area..=1.0);
    let aspect: f64 = rng.random_range((0.75f64).ln()..=(4.0f64 / 3.0).ln()).exp();
    let ch = ((h as f64 * (area / aspect).sqrt()).round() as usize).clamp(1, h);
    let cw = ((w as f64 * (area * aspect).sqrt()).round() as usize).clamp(1, w);
    let y = rng.random_range(0..=h - ch);
    let x = rng.random_range(0..=w - cw);
    let mut map = SampleMap::zeros((h, w), (h, w));
    map.resize_region(Rect::new(y, x, ch, cw), Rect::full(h, w));
    let mut out = map.apply(image);
    if rng.random_bool(0.5) {
        out.invert_axis(Axis(2));
    }
    out
}

/// Fraction of `images` that `net` labels correctly.
pub fn accuracy(net: &Network<f32>, images: &Array4<f32>, labels: &[usize]) -> Result<f64> {
    let mut correct = 0;
    for start in (0..labels.len()).step_by(100) {
        let end = (start + 100).min(labels.len());
        let pred = net.predict(&images.slice(s![start..end, .., .., ..]).to_owned())?;
        correct += pred.iter().zip(&labels[start..end]).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / labels.len().max(1) as f64)
}

/// SGD with momentum, cosine learning-rate decay and weight decay on
/// weight matrices. Evaluates on the test split after every epoch.
pub fn train(
    net: &mut Network<f32>,
    model_id: &str,
    (images, labels): (&Array4<f32>, &[usize]),
    (test_images, test_labels): (&Array4<f32>, &[usize]),
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingCurve> {
    let n = labels.len();
    if n == 0 || config.batch_size == 0 {
        return Err(invalid("training needs data and a positive batch size"));
    }
    let (_, c, h, w) = images.dim();
    let mut velocity: Vec<(Array2<f32>, ndarray::Array1<f32>)> = net
        .params_mut()
        .into_iter()
        .map(|(_, wt, b)| (Array2::zeros(wt.raw_dim()), ndarray::Array1::zeros(b.len())))
        .collect();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut curve = TrainingCurve { model_id: model_id.to_string(), ..Default::default() };
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let mut batch = Array4::zeros((b, c, h, w));
            for (slot, &i) in chunk.iter().enumerate() {
                let aug = augment(images.index_axis(Axis(0), i), config.min_crop_area, rng);
                batch.index_axis_mut(Axis(0), slot).assign(&aug);
            }
            let tape = net.forward_tape(&batch)?;
            let probs = softmax_rows(tape.logits().view());
            let mut dlogits = probs.clone();
            for (row, &i) in chunk.iter().enumerate() {
                let y = labels[i];
                loss_sum -= (probs[[row, y]].max(1e-12) as f64).ln();
                dlogits[[row, y]] -= 1.0;
            }
            dlogits.mapv_inplace(|v| v / b as f32);
            let grads = net.backward_params(&tape, &dlogits)?;
            let lr = 0.5 * config.learning_rate * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos());
            let (lr, mu, wd) = (lr as f32, config.momentum as f32, config.weight_decay as f32);
            for ((idx, wt, bias), (vw, vb)) in net.params_mut().into_iter().zip(velocity.iter_mut()) {
                let (gw, gb) = grads.layers[idx].as_ref().expect("trainable layer has gradients");
                ndarray::Zip::from(&mut *vw).and(gw).and(&*wt).for_each(|v, &g, &p| *v = mu * *v + g + wd * p);
                ndarray::Zip::from(&mut *vb).and(gb).for_each(|v, &g| *v = mu * *v + g);
                wt.scaled_add(-lr, vw);
                bias.scaled_add(-lr, vb);
            }
            step += 1;
        }
        curve.epoch_loss.push(loss_sum / n as f64);
        curve.epoch_accuracy.push(accuracy(net, test_images, test_labels)?);
    }
    Ok(curve)
}
