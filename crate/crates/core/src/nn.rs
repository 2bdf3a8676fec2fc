//! Small feed-forward classifiers with hand-written reverse mode.
//!
//! A [`Network`] is a flat stack of [`Layer`]s. All architectures used here
//! end in global pooling and linear heads, so they accept any input size.
//! The forward pass can record a [`Tape`] from which input gradients,
//! parameter gradients, penultimate features and Grad-CAM ingredients are
//! recovered.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Intermediate value flowing between layers.
#[derive(Debug, Clone)]
pub enum Activation<T> {
    Map(Array4<T>),
    Flat(Array2<T>),
}

impl<T: Scalar> Activation<T> {
    fn map(&self) -> Result<&Array4<T>> {
        match self {
            Activation::Map(m) => Ok(m),
            Activation::Flat(_) => Err(invalid("layer expects a spatial input")),
        }
    }

    fn flat(&self) -> Result<&Array2<T>> {
        match self {
            Activation::Flat(f) => Ok(f),
            Activation::Map(_) => Err(invalid("layer expects a flat input")),
        }
    }

    fn into_map(self) -> Array4<T> {
        match self {
            Activation::Map(m) => m,
            Activation::Flat(f) => panic!("expected spatial activation, got {:?}", f.dim()),
        }
    }

    fn into_flat(self) -> Array2<T> {
        match self {
            Activation::Flat(f) => f,
            Activation::Map(m) => panic!("expected flat activation, got {:?}", m.dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `out × (in · k · k)`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            weight: Array2::from_shape_fn((out_ch, fan_in), |_| T::of(normal.sample(rng))),
            bias: Array1::zeros(out_ch),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }

    fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        if hp < self.kernel || wp < self.kernel {
            return Err(invalid(format!("input {h}x{w} too small for {}x{} convolution", self.kernel, self.kernel)));
        }
        Ok(((hp - self.kernel) / self.stride + 1, (wp - self.kernel) / self.stride + 1))
    }

    fn im2col(&self, x: ArrayView3<T>, ho: usize, wo: usize) -> Array2<T> {
        let (c, h, w) = x.dim();
        let k = self.kernel;
        let mut cols = Array2::zeros((c * k * k, ho * wo));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("contiguous");
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let mut dst = cols.row_mut(row);
                    let dst = dst.as_slice_mut().expect("row of standard array");
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ch * h + iy as usize) * w;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = xs[base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<T>, c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Array3<T> {
        let k = self.kernel;
        let mut out = Array3::zeros((c, h, w));
        let os = out.as_slice_mut().expect("fresh array");
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let src = cols.row(row);
                    let src = src.as_slice().expect("row of standard array");
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ch * h + iy as usize) * w;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                os[base + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `out × in`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (1.0 / inputs as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            weight: Array2::from_shape_fn((outputs, inputs), |_| T::of(normal.sample(rng))),
            bias: Array1::zeros(outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    /// Per-channel `(x - mean) / std`.
    Normalize { mean: [T; 3], std: [T; 3] },
    Conv2d(Conv2d<T>),
    Relu,
    /// 2×2 max pooling, stride 2 (floor).
    MaxPool2,
    /// 2×2 average pooling, stride 2 (floor).
    AvgPool2,
    GlobalAvgPool,
    Flatten,
    Linear(Linear<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Normalize { .. } => "normalize",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2 => "maxpool2",
            Layer::AvgPool2 => "avgpool2",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Flatten => "flatten",
            Layer::Linear(_) => "linear",
        }
    }
}

/// Per-layer data kept for the backward pass.
#[derive(Debug, Clone)]
enum Saved<T> {
    None,
    Cols(Vec<Array2<T>>),
    Argmax(Vec<u32>),
}

/// Record of a forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    inputs: Vec<Activation<T>>,
    saved: Vec<Saved<T>>,
    logits: Array2<T>,
}

impl<T: Scalar> Tape<T> {
    pub fn logits(&self) -> &Array2<T> {
        &self.logits
    }

    /// Input of layer `index` as recorded in the forward pass.
    pub fn layer_input(&self, index: usize) -> &Activation<T> {
        &self.inputs[index]
    }
}

/// Gradients of the trainable parameters, aligned with the layer list.
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    pub layers: Vec<Option<(Array2<T>, Array1<T>)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub arch: String,
    pub classes: usize,
    pub layers: Vec<Layer<T>>,
}

fn pool_dims(h: usize, w: usize) -> Result<(usize, usize)> {
    if h < 2 || w < 2 {
        return Err(invalid(format!("input {h}x{w} too small for 2x2 pooling")));
    }
    Ok((h / 2, w / 2))
}

impl<T: Scalar> Network<T> {
    pub fn new(arch: impl Into<String>, classes: usize, layers: Vec<Layer<T>>) -> Result<Self> {
        if classes < 2 {
            return Err(invalid("a classifier needs at least two classes"));
        }
        Ok(Self { arch: arch.into(), classes, layers })
    }

    fn layer_forward(&self, layer: &Layer<T>, x: &Activation<T>, keep: bool) -> Result<(Activation<T>, Saved<T>)> {
        Ok(match layer {
            Layer::Normalize { mean, std } => {
                let mut y = x.map()?.clone();
                for c in 0..3 {
                    let (m, s) = (mean[c], std[c]);
                    y.slice_mut(s![.., c, .., ..]).mapv_inplace(|v| (v - m) / s);
                }
                (Activation::Map(y), Saved::None)
            }
            Layer::Conv2d(conv) => {
                let x = x.map()?;
                let (n, c, h, w) = x.dim();
                if c != conv.in_ch {
                    return Err(invalid(format!("conv expects {} channels, got {c}", conv.in_ch)));
                }
                let (ho, wo) = conv.out_dims(h, w)?;
                let mut y = Array4::zeros((n, conv.out_ch, ho, wo));
                let mut saved = Vec::with_capacity(if keep { n } else { 0 });
                for i in 0..n {
                    let cols = conv.im2col(x.slice(s![i, .., .., ..]), ho, wo);
                    let mut out = y.slice_mut(s![i, .., .., ..]).into_shape_with_order((conv.out_ch, ho * wo)).expect("contiguous");
                    general_mat_mul(T::one(), &conv.weight, &cols, T::zero(), &mut out);
                    for (mut row, b) in out.axis_iter_mut(Axis(0)).zip(conv.bias.iter()) {
                        row.mapv_inplace(|v| v + *b);
                    }
                    if keep {
                        saved.push(cols);
                    }
                }
                (Activation::Map(y), if keep { Saved::Cols(saved) } else { Saved::None })
            }
            Layer::Relu => match x {
                Activation::Map(m) => (Activation::Map(m.mapv(|v| v.max(T::zero()))), Saved::None),
                Activation::Flat(f) => (Activation::Flat(f.mapv(|v| v.max(T::zero()))), Saved::None),
            },
            Layer::MaxPool2 => {
                let x = x.map()?;
                let (n, c, h, w) = x.dim();
                let (ho, wo) = pool_dims(h, w)?;
                let mut y = Array4::zeros((n, c, ho, wo));
                let mut arg = Vec::with_capacity(if keep { n * c * ho * wo } else { 0 });
                for i in 0..n {
                    for ch in 0..c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let mut best = x[[i, ch, 2 * oy, 2 * ox]];
                                let mut at = 0u32;
                                for (k, (dy, dx)) in [(0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                                    let v = x[[i, ch, 2 * oy + dy, 2 * ox + dx]];
                                    if v > best {
                                        best = v;
                                        at = k as u32 + 1;
                                    }
                                }
                                y[[i, ch, oy, ox]] = best;
                                if keep {
                                    arg.push(at);
                                }
                            }
                        }
                    }
                }
                (Activation::Map(y), if keep { Saved::Argmax(arg) } else { Saved::None })
            }
            Layer::AvgPool2 => {
                let x = x.map()?;
                let (n, c, h, w) = x.dim();
                let (ho, wo) = pool_dims(h, w)?;
                let quarter = T::of(0.25);
                let y = Array4::from_shape_fn((n, c, ho, wo), |(i, ch, oy, ox)| {
                    (x[[i, ch, 2 * oy, 2 * ox]] + x[[i, ch, 2 * oy, 2 * ox + 1]] + x[[i, ch, 2 * oy + 1, 2 * ox]] + x[[i, ch, 2 * oy + 1, 2 * ox + 1]]) * quarter
                });
                (Activation::Map(y), Saved::None)
            }
            Layer::GlobalAvgPool => {
                let x = x.map()?;
                let (n, c, h, w) = x.dim();
                let area = T::of((h * w) as f64);
                let y = Array2::from_shape_fn((n, c), |(i, ch)| x.slice(s![i, ch, .., ..]).sum() / area);
                (Activation::Flat(y), Saved::None)
            }
            Layer::Flatten => {
                let x = x.map()?;
                let (n, c, h, w) = x.dim();
                let y = x.as_standard_layout().into_owned().into_shape_with_order((n, c * h * w)).expect("contiguous");
                (Activation::Flat(y), Saved::None)
            }
            Layer::Linear(lin) => {
                let x = x.flat()?;
                if x.ncols() != lin.weight.ncols() {
                    return Err(invalid(format!("linear expects {} inputs, got {}", lin.weight.ncols(), x.ncols())));
                }
                let mut y = x.dot(&lin.weight.t());
                y += &lin.bias;
                (Activation::Flat(y), Saved::None)
            }
        })
    }

    fn run(&self, x: &Array4<T>, keep: bool) -> Result<Tape<T>> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut saved = Vec::with_capacity(self.layers.len());
        let mut cur = Activation::Map(x.clone());
        for layer in &self.layers {
            let (next, sv) = self.layer_forward(layer, &cur, keep)?;
            if keep {
                inputs.push(cur);
                saved.push(sv);
            }
            cur = next;
        }
        let logits = match cur {
            Activation::Flat(f) if f.ncols() == self.classes => f,
            Activation::Flat(f) => return Err(invalid(format!("network emits {} logits, expected {}", f.ncols(), self.classes))),
            Activation::Map(_) => return Err(invalid("network does not end in a flat layer")),
        };
        if !keep {
            inputs.clear();
        }
        Ok(Tape { inputs, saved, logits })
    }

    /// Logits for an `N × 3 × H × W` batch.
    pub fn logits(&self, x: &Array4<T>) -> Result<Array2<T>> {
        Ok(self.run(x, false)?.logits)
    }

    pub fn forward_tape(&self, x: &Array4<T>) -> Result<Tape<T>> {
        self.run(x, true)
    }

    pub fn probabilities(&self, x: &Array4<T>) -> Result<Array2<T>> {
        Ok(softmax_rows(self.logits(x)?.view()))
    }

    pub fn predict(&self, x: &Array4<T>) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.axis_iter(Axis(0)).map(|r| argmax(r.as_slice().expect("row"))).collect())
    }

    fn layer_backward(
        &self,
        index: usize,
        tape: &Tape<T>,
        grad: Activation<T>,
        grads: Option<&mut ParamGrads<T>>,
    ) -> Activation<T> {
        let input = &tape.inputs[index];
        match &self.layers[index] {
            Layer::Normalize { std, .. } => {
                let mut g = grad.into_map();
                for c in 0..3 {
                    let s = std[c];
                    g.slice_mut(s![.., c, .., ..]).mapv_inplace(|v| v / s);
                }
                Activation::Map(g)
            }
            Layer::Conv2d(conv) => {
                let g = grad.into_map();
                let x = input.map().expect("conv input");
                let (n, c, h, w) = x.dim();
                let (_, _, ho, wo) = g.dim();
                let Saved::Cols(cols) = &tape.saved[index] else { panic!("conv tape lacks columns") };
                let mut dx = Array4::zeros((n, c, h, w));
                let mut dw = grads.as_ref().map(|_| Array2::<T>::zeros(conv.weight.dim()));
                let mut db = grads.as_ref().map(|_| Array1::<T>::zeros(conv.out_ch));
                let mut dcols = Array2::zeros((c * conv.kernel * conv.kernel, ho * wo));
                for i in 0..n {
                    let gi = g.slice(s![i, .., .., ..]);
                    let gi = gi.as_standard_layout();
                    let gi: ArrayView2<T> = gi.view().into_shape_with_order((conv.out_ch, ho * wo)).expect("contiguous");
                    general_mat_mul(T::one(), &conv.weight.t(), &gi, T::zero(), &mut dcols);
                    dx.slice_mut(s![i, .., .., ..]).assign(&conv.col2im(&dcols, c, h, w, ho, wo));
                    if let (Some(dw), Some(db)) = (dw.as_mut(), db.as_mut()) {
                        general_mat_mul(T::one(), &gi, &cols[i].t(), T::one(), dw);
                        *db += &gi.sum_axis(Axis(1));
                    }
                }
                if let Some(pg) = grads {
                    pg.layers[index] = Some((dw.expect("allocated"), db.expect("allocated")));
                }
                Activation::Map(dx)
            }
            Layer::Relu => match (input, grad) {
                (Activation::Map(x), Activation::Map(mut g)) => {
                    ndarray::Zip::from(&mut g).and(x).for_each(|g, &x| {
                        if x <= T::zero() {
                            *g = T::zero();
                        }
                    });
                    Activation::Map(g)
                }
                (Activation::Flat(x), Activation::Flat(mut g)) => {
                    ndarray::Zip::from(&mut g).and(x).for_each(|g, &x| {
                        if x <= T::zero() {
                            *g = T::zero();
                        }
                    });
                    Activation::Flat(g)
                }
                _ => panic!("relu activation kinds disagree"),
            },
            Layer::MaxPool2 => {
                let g = grad.into_map();
                let x = input.map().expect("pool input");
                let Saved::Argmax(arg) = &tape.saved[index] else { panic!("pool tape lacks argmax") };
                let mut dx = Array4::zeros(x.dim());
                let (n, c, ho, wo) = g.dim();
                let offs = [(0, 0), (0, 1), (1, 0), (1, 1)];
                let mut k = 0;
                for i in 0..n {
                    for ch in 0..c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let (dy, dxo) = offs[arg[k] as usize];
                                dx[[i, ch, 2 * oy + dy, 2 * ox + dxo]] += g[[i, ch, oy, ox]];
                                k += 1;
                            }
                        }
                    }
                }
                Activation::Map(dx)
            }
            Layer::AvgPool2 => {
                let g = grad.into_map();
                let x = input.map().expect("pool input");
                let mut dx = Array4::zeros(x.dim());
                let quarter = T::of(0.25);
                for ((i, ch, oy, ox), v) in g.indexed_iter() {
                    let q = *v * quarter;
                    for (dy, dxo) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        dx[[i, ch, 2 * oy + dy, 2 * ox + dxo]] += q;
                    }
                }
                Activation::Map(dx)
            }
            Layer::GlobalAvgPool => {
                let g = grad.into_flat();
                let x = input.map().expect("pool input");
                let (n, c, h, w) = x.dim();
                let area = T::of((h * w) as f64);
                Activation::Map(Array4::from_shape_fn((n, c, h, w), |(i, ch, _, _)| g[[i, ch]] / area))
            }
            Layer::Flatten => {
                let g = grad.into_flat();
                let dim = input.map().expect("flatten input").dim();
                Activation::Map(g.into_shape_with_order(dim).expect("contiguous"))
            }
            Layer::Linear(lin) => {
                let g = grad.into_flat();
                let x = input.flat().expect("linear input");
                if let Some(pg) = grads {
                    pg.layers[index] = Some((g.t().dot(x), g.sum_axis(Axis(0))));
                }
                Activation::Flat(g.dot(&lin.weight))
            }
        }
    }

    /// Gradient w.r.t. the input of layer `stop`, given `dlogits`.
    pub fn backward_to(&self, tape: &Tape<T>, dlogits: &Array2<T>, stop: usize) -> Result<Activation<T>> {
        if tape.inputs.len() != self.layers.len() {
            return Err(invalid("tape was recorded without intermediate values"));
        }
        if dlogits.dim() != tape.logits.dim() {
            return Err(invalid("logit gradient shape differs from the tape"));
        }
        let mut g = Activation::Flat(dlogits.clone());
        for i in (stop..self.layers.len()).rev() {
            g = self.layer_backward(i, tape, g, None);
        }
        Ok(g)
    }

    /// Input gradient `J^T dlogits` for the recorded batch.
    pub fn backward_input(&self, tape: &Tape<T>, dlogits: &Array2<T>) -> Result<Array4<T>> {
        Ok(self.backward_to(tape, dlogits, 0)?.into_map())
    }

    /// Parameter gradients (and the input gradient) for training.
    pub fn backward_params(&self, tape: &Tape<T>, dlogits: &Array2<T>) -> Result<ParamGrads<T>> {
        if tape.inputs.len() != self.layers.len() {
            return Err(invalid("tape was recorded without intermediate values"));
        }
        let mut grads = ParamGrads { layers: vec![None; self.layers.len()] };
        let mut g = Activation::Flat(dlogits.clone());
        let first_trainable = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Conv2d(_) | Layer::Linear(_)))
            .unwrap_or(0);
        for i in (first_trainable..self.layers.len()).rev() {
            g = self.layer_backward(i, tape, g, Some(&mut grads));
        }
        Ok(grads)
    }

    /// Index of the final linear layer, whose input is the penultimate
    /// representation.
    pub fn head_index(&self) -> Result<usize> {
        match self.layers.last() {
            Some(Layer::Linear(_)) => Ok(self.layers.len() - 1),
            _ => Err(Error::UnsupportedModel(format!("{} has no final linear layer", self.arch))),
        }
    }

    /// Penultimate-layer features, one row per input.
    pub fn features(&self, x: &Array4<T>) -> Result<Array2<T>> {
        let head = self.head_index()?;
        let mut cur = Activation::Map(x.clone());
        for layer in &self.layers[..head] {
            cur = self.layer_forward(layer, &cur, false)?.0;
        }
        match cur {
            Activation::Flat(f) => Ok(f),
            Activation::Map(_) => Err(Error::UnsupportedModel("penultimate activation is not flat".into())),
        }
    }

    /// Index of the layer whose input is the last convolutional feature map.
    pub fn cam_index(&self) -> Result<usize> {
        let last_conv = self
            .layers
            .iter()
            .rposition(|l| matches!(l, Layer::Conv2d(_)))
            .ok_or_else(|| Error::UnsupportedModel(format!("{} has no convolutional feature map", self.arch)))?;
        self.layers[last_conv..]
            .iter()
            .position(|l| matches!(l, Layer::GlobalAvgPool | Layer::Flatten))
            .map(|p| last_conv + p)
            .ok_or_else(|| Error::UnsupportedModel("no pooling after the last convolution".into()))
    }

    /// Last convolutional feature map of a single image and the gradient of
    /// the `label` logit with respect to it, both `C × h × w`.
    pub fn cam_parts(&self, image: ArrayView3<T>, label: usize) -> Result<(Array3<T>, Array3<T>)> {
        if label >= self.classes {
            return Err(invalid(format!("label {label} out of range for {} classes", self.classes)));
        }
        let at = self.cam_index()?;
        let x = image.to_owned().insert_axis(Axis(0));
        let tape = self.forward_tape(&x)?;
        let mut d = Array2::zeros((1, self.classes));
        d[[0, label]] = T::one();
        let g = self.backward_to(&tape, &d, at)?.into_map();
        let fmap = tape.inputs[at].map()?.index_axis(Axis(0), 0).to_owned();
        Ok((fmap, g.index_axis_move(Axis(0), 0)))
    }

    /// Mutable trainable parameters in layer order.
    pub fn params_mut(&mut self) -> Vec<(usize, &mut Array2<T>, &mut Array1<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::Conv2d(c) => Some((i, &mut c.weight, &mut c.bias)),
                Layer::Linear(lin) => Some((i, &mut lin.weight, &mut lin.bias)),
                _ => None,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
                Layer::Linear(lin) => lin.weight.len() + lin.bias.len(),
                _ => 0,
            })
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network::from_record(&self.to_record()).expect("record of a valid network")
    }

    pub fn to_record(&self) -> NetworkRecord {
        let vec = |a: &Array2<T>| a.iter().map(|v| v.f64()).collect::<Vec<_>>();
        let vec1 = |a: &Array1<T>| a.iter().map(|v| v.f64()).collect::<Vec<_>>();
        NetworkRecord {
            arch: self.arch.clone(),
            classes: self.classes,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Normalize { mean, std } => LayerRecord::Normalize { mean: mean.map(|v| v.f64()), std: std.map(|v| v.f64()) },
                    Layer::Conv2d(c) => LayerRecord::Conv2d {
                        in_ch: c.in_ch,
                        out_ch: c.out_ch,
                        kernel: c.kernel,
                        stride: c.stride,
                        pad: c.pad,
                        weight: vec(&c.weight),
                        bias: vec1(&c.bias),
                    },
                    Layer::Relu => LayerRecord::Relu,
                    Layer::MaxPool2 => LayerRecord::MaxPool2,
                    Layer::AvgPool2 => LayerRecord::AvgPool2,
                    Layer::GlobalAvgPool => LayerRecord::GlobalAvgPool,
                    Layer::Flatten => LayerRecord::Flatten,
                    Layer::Linear(lin) => LayerRecord::Linear {
                        inputs: lin.weight.ncols(),
                        outputs: lin.weight.nrows(),
                        weight: vec(&lin.weight),
                        bias: vec1(&lin.bias),
                    },
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &NetworkRecord) -> Result<Self> {
        let arr2 = |rows: usize, cols: usize, v: &[f64]| {
            Array2::from_shape_vec((rows, cols), v.iter().map(|x| T::of(*x)).collect()).map_err(|e| invalid(e.to_string()))
        };
        let arr1 = |v: &[f64]| Array1::from_iter(v.iter().map(|x| T::of(*x)));
        let layers = rec
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    LayerRecord::Normalize { mean, std } => Layer::Normalize { mean: mean.map(T::of), std: std.map(T::of) },
                    LayerRecord::Conv2d { in_ch, out_ch, kernel, stride, pad, weight, bias } => Layer::Conv2d(Conv2d {
                        weight: arr2(*out_ch, in_ch * kernel * kernel, weight)?,
                        bias: arr1(bias),
                        in_ch: *in_ch,
                        out_ch: *out_ch,
                        kernel: *kernel,
                        stride: *stride,
                        pad: *pad,
                    }),
                    LayerRecord::Relu => Layer::Relu,
                    LayerRecord::MaxPool2 => Layer::MaxPool2,
                    LayerRecord::AvgPool2 => Layer::AvgPool2,
                    LayerRecord::GlobalAvgPool => Layer::GlobalAvgPool,
                    LayerRecord::Flatten => Layer::Flatten,
                    LayerRecord::Linear { inputs, outputs, weight, bias } => {
                        Layer::Linear(Linear { weight: arr2(*outputs, *inputs, weight)?, bias: arr1(bias) })
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(rec.arch.clone(), rec.classes, layers)
    }
}

/// Forward-only view of a classifier, enough for victims.
pub trait Classifier<T: Scalar>: Send + Sync {
    fn classes(&self) -> usize;

    fn logits(&self, x: &Array4<T>) -> Result<Array2<T>>;

    fn probabilities(&self, x: &Array4<T>) -> Result<Array2<T>> {
        Ok(softmax_rows(self.logits(x)?.view()))
    }

    fn predict(&self, x: &Array4<T>) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.axis_iter(Axis(0)).map(|r| argmax(&r.to_vec())).collect())
    }
}

impl<T: Scalar> Classifier<T> for Network<T> {
    fn classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, x: &Array4<T>) -> Result<Array2<T>> {
        Network::logits(self, x)
    }
}

/// Scalar-agnostic serialized form of a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub arch: String,
    pub classes: usize,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerRecord {
    Normalize { mean: [f64; 3], std: [f64; 3] },
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, weight: Vec<f64>, bias: Vec<f64> },
    Relu,
    MaxPool2,
    AvgPool2,
    GlobalAvgPool,
    Flatten,
    Linear { inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64> },
}

pub fn softmax_rows<T: Scalar>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
