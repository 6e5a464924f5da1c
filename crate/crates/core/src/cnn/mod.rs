//! Convolutional activity detector.
//!
//! The decorrelated tensor of a frame is split into real and imaginary planes,
//! giving an input of `2M` channels over a `K x Ns` grid. A small convolutional
//! stack maps it to `K` logits, and device `k` is declared active when its
//! logistic output reaches a threshold.

mod adam;
mod checkpoint;
mod layers;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, load_train_state, save_checkpoint, save_train_state, Checkpoint};
pub use train::{
    split_indices, train, train_from_state, EpochRecord, SplitFractions, TrainConfig, TrainOutcome,
    TrainState,
};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::DecorrelatedTensor;
use crate::scalar::{cplx, Real};
use crate::simulator::{derive_seed, ActivityVector};
use layers::ConvGeom;

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Stride-1 convolution with size-preserving zero padding; kernel sides are odd.
    Conv2d { filters: usize, kernel: (usize, usize) },
    Relu,
    /// Mean over the symbol (last) axis.
    MeanPoolSymbols,
    /// Fully connected; flattens a feature map.
    Dense { units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { channels: usize, height: usize, width: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Map { channels, height, width } => channels * height * width,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// `(channels, height, width)`, i.e. `(2M, K, Ns)`.
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// conv 3x3 x8, ReLU, conv 3x3 x16, ReLU, mean over symbols, dense 64, ReLU, dense K.
    pub fn standard(antennas: usize, devices: usize, symbols: usize) -> Self {
        Self {
            input: (2 * antennas, devices, symbols),
            layers: vec![
                LayerSpec::Conv2d { filters: 8, kernel: (3, 3) },
                LayerSpec::Relu,
                LayerSpec::Conv2d { filters: 16, kernel: (3, 3) },
                LayerSpec::Relu,
                LayerSpec::MeanPoolSymbols,
                LayerSpec::Dense { units: 64 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: devices },
            ],
        }
    }

    /// Shape entering each layer followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::param("arch.input", "all dimensions must be positive"));
        }
        let mut shapes = vec![Shape::Map { channels: c, height: h, width: w }];
        for (idx, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match (*layer, cur) {
                (LayerSpec::Conv2d { filters, kernel }, Shape::Map { height, width, .. }) => {
                    if filters == 0 || kernel.0 % 2 == 0 || kernel.1 % 2 == 0 {
                        return Err(Error::param(
                            "arch.layers",
                            format!("layer {idx}: need filters > 0 and odd kernel sides"),
                        ));
                    }
                    Shape::Map { channels: filters, height, width }
                }
                (LayerSpec::Conv2d { .. }, Shape::Flat(_)) | (LayerSpec::MeanPoolSymbols, Shape::Flat(_)) => {
                    return Err(Error::param("arch.layers", format!("layer {idx} needs a feature map")));
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::MeanPoolSymbols, Shape::Map { channels, height, .. }) => {
                    Shape::Map { channels, height, width: 1 }
                }
                (LayerSpec::Dense { units }, _) => {
                    if units == 0 {
                        return Err(Error::param("arch.layers", format!("layer {idx}: zero units")));
                    }
                    Shape::Flat(units)
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Number of logits.
    pub fn outputs(&self) -> Result<usize> {
        Ok(self.shapes()?.last().unwrap().len())
    }

    /// `(weights, bias)` lengths per layer.
    fn param_lens(&self) -> Result<Vec<(usize, usize)>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, shape)| match (*layer, *shape) {
                (LayerSpec::Conv2d { filters, kernel }, Shape::Map { channels, .. }) => {
                    (filters * channels * kernel.0 * kernel.1, filters)
                }
                (LayerSpec::Dense { units }, s) => (units * s.len(), units),
                _ => (0, 0),
            })
            .collect())
    }

    fn fan_in(&self, layer: usize) -> Result<usize> {
        let shapes = self.shapes()?;
        Ok(match (self.layers[layer], shapes[layer]) {
            (LayerSpec::Conv2d { kernel, .. }, Shape::Map { channels, .. }) => channels * kernel.0 * kernel.1,
            (LayerSpec::Dense { .. }, s) => s.len(),
            _ => 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// All trainable values, one entry per layer (empty for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> Params<T> {
    pub fn zeros(arch: &ArchSpec) -> Result<Self> {
        Ok(Self {
            layers: arch
                .param_lens()?
                .into_iter()
                .map(|(w, b)| LayerParams {
                    weights: vec![T::zero(); w],
                    bias: vec![T::zero(); b],
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn add_assign(&mut self, other: &Params<T>) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += *b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.iter().map(|v| U::lit(v.as_f64())).collect(),
                    bias: l.bias.iter().map(|v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// One training example: standardised input and its activity labels.
pub type Sample<'a, T> = (&'a [T], &'a [bool]);

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: ArchSpec,
    shapes: Vec<Shape>,
    params: Params<T>,
}

impl<T: Real> Network<T> {
    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "cnn-init"));
        for idx in 0..net.arch.layers.len() {
            let fan_in = net.arch.fan_in(idx)?;
            if fan_in == 0 {
                continue;
            }
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in &mut net.params.layers[idx].weights {
                *w = T::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        let shapes = arch.shapes()?;
        let params = Params::zeros(&arch)?;
        Ok(Self { arch, shapes, params })
    }

    pub fn from_params(arch: ArchSpec, params: Params<T>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let expect = Params::<T>::zeros(&net.arch)?;
        let ok = expect.layers.len() == params.layers.len()
            && expect.layers.iter().zip(&params.layers).all(|(e, p)| {
                e.weights.len() == p.weights.len() && e.bias.len() == p.bias.len()
            });
        if !ok {
            return Err(Error::dims("network parameters", expect.len(), params.len()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].len()
    }

    pub fn outputs(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::dims("network input", self.input_len(), input.len()));
        }
        Ok(())
    }

    fn conv_geom(&self, layer: usize) -> ConvGeom {
        match (self.arch.layers[layer], self.shapes[layer]) {
            (LayerSpec::Conv2d { filters, kernel }, Shape::Map { channels, height, width }) => ConvGeom {
                in_c: channels,
                h: height,
                w: width,
                out_c: filters,
                kh: kernel.0,
                kw: kernel.1,
            },
            _ => unreachable!("validated architecture"),
        }
    }

    /// Activations entering each layer followed by the logits.
    fn trace(&self, input: &[T]) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.arch.layers.len() + 1);
        acts.push(input.to_vec());
        for (idx, layer) in self.arch.layers.iter().enumerate() {
            let x = acts.last().unwrap();
            let mut out = vec![T::zero(); self.shapes[idx + 1].len()];
            let p = &self.params.layers[idx];
            match *layer {
                LayerSpec::Conv2d { .. } => {
                    layers::conv_forward(&self.conv_geom(idx), x, &p.weights, &p.bias, &mut out)
                }
                LayerSpec::Relu => layers::relu_forward(x, &mut out),
                LayerSpec::MeanPoolSymbols => {
                    let Shape::Map { width, .. } = self.shapes[idx] else { unreachable!() };
                    layers::mean_pool_forward(x, width, &mut out)
                }
                LayerSpec::Dense { .. } => layers::dense_forward(x, &p.weights, &p.bias, &mut out),
            }
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        Ok(self.trace(input).pop().unwrap())
    }

    /// Activity probabilities `sigmoid(logits)`.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.logits(input)?.into_iter().map(sigmoid).collect())
    }

    /// Smallest `|x|` entering any ReLU; finite-difference checks are unreliable near zero.
    pub fn relu_margin(&self, input: &[T]) -> Result<f64> {
        self.check_input(input)?;
        let acts = self.trace(input);
        Ok(self
            .arch
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Relu))
            .flat_map(|(idx, _)| acts[idx].iter().map(|v| v.as_f64().abs()))
            .fold(f64::INFINITY, f64::min))
    }

    /// Adds `scale * d loss / d params` for one sample into `grads`; returns the
    /// un-scaled loss.
    fn accumulate(&self, input: &[T], labels: &[bool], pos_weight: T, scale: T, grads: &mut Params<T>) -> T {
        let acts = self.trace(input);
        let logits = acts.last().unwrap();
        let mut loss = T::zero();
        let mut grad: Vec<T> = logits
            .iter()
            .zip(labels)
            .map(|(&z, &a)| {
                loss += bce_with_logits(z, a, pos_weight);
                bce_logit_grad(z, a, pos_weight) * scale
            })
            .collect();
        for idx in (0..self.arch.layers.len()).rev() {
            let x = &acts[idx];
            let need_in = idx > 0;
            let mut grad_in = if need_in { vec![T::zero(); x.len()] } else { Vec::new() };
            let p = &self.params.layers[idx];
            let g = &mut grads.layers[idx];
            match self.arch.layers[idx] {
                LayerSpec::Conv2d { .. } => layers::conv_backward(
                    &self.conv_geom(idx),
                    x,
                    &p.weights,
                    &grad,
                    &mut g.weights,
                    &mut g.bias,
                    need_in.then_some(grad_in.as_mut_slice()),
                ),
                LayerSpec::Dense { .. } => layers::dense_backward(
                    x,
                    &p.weights,
                    &grad,
                    &mut g.weights,
                    &mut g.bias,
                    need_in.then_some(grad_in.as_mut_slice()),
                ),
                LayerSpec::Relu if need_in => layers::relu_backward(x, &grad, &mut grad_in),
                LayerSpec::MeanPoolSymbols if need_in => {
                    let Shape::Map { width, .. } = self.shapes[idx] else { unreachable!() };
                    layers::mean_pool_backward(&grad, width, &mut grad_in)
                }
                _ => {}
            }
            grad = grad_in;
        }
        loss
    }

    fn check_batch(&self, batch: &[Sample<'_, T>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::param("batch", "must not be empty"));
        }
        for (x, a) in batch {
            self.check_input(x)?;
            if a.len() != self.outputs() {
                return Err(Error::dims("labels", self.outputs(), a.len()));
            }
        }
        Ok(())
    }

    /// Mean loss over the batch and its exact gradient. Samples are processed in
    /// fixed chunks of `chunk` whose partial sums are reduced in order, so the result
    /// does not depend on the number of worker threads.
    pub fn batch_gradient(
        &self,
        batch: &[Sample<'_, T>],
        pos_weight: f64,
        chunk: usize,
    ) -> Result<(T, Params<T>)> {
        self.check_batch(batch)?;
        let scale = T::lit(1.0 / batch.len() as f64);
        let pw = T::lit(pos_weight);
        let partials: Vec<Result<(T, Params<T>)>> = batch
            .par_chunks(chunk.max(1))
            .map(|c| {
                let mut g = Params::zeros(&self.arch)?;
                let mut loss = T::zero();
                for (x, a) in c {
                    loss += self.accumulate(x, a, pw, scale, &mut g);
                }
                Ok((loss, g))
            })
            .collect();
        let mut total = T::zero();
        let mut grads = Params::zeros(&self.arch)?;
        for p in partials {
            let (l, g) = p?;
            total += l;
            grads.add_assign(&g);
        }
        Ok((total * scale, grads))
    }

    /// Mean loss over the batch.
    pub fn batch_loss(&self, batch: &[Sample<'_, T>], pos_weight: f64) -> Result<T> {
        self.check_batch(batch)?;
        let pw = T::lit(pos_weight);
        let losses: Vec<T> = batch
            .par_iter()
            .map(|(x, a)| {
                let z = self.trace(x).pop().unwrap();
                z.iter().zip(a.iter()).map(|(&z, &a)| bce_with_logits(z, a, pw)).sum::<T>()
            })
            .collect();
        Ok(losses.into_iter().sum::<T>() * T::lit(1.0 / batch.len() as f64))
    }

    /// Probabilities for many inputs, in input order.
    pub fn predict_batch(&self, inputs: &[&[T]]) -> Result<Vec<Vec<T>>> {
        inputs.par_iter().map(|x| self.forward(x)).collect()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            shapes: self.shapes.clone(),
            params: self.params.cast(),
        }
    }
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `-(w a ln sigma(z) + (1 - a) ln(1 - sigma(z)))` computed from the logit.
pub fn bce_with_logits<T: Real>(z: T, label: bool, pos_weight: T) -> T {
    if label {
        pos_weight * softplus(-z)
    } else {
        softplus(z)
    }
}

/// Derivative of [`bce_with_logits`] in `z`; `sigma(z) - a` when `pos_weight = 1`.
pub fn bce_logit_grad<T: Real>(z: T, label: bool, pos_weight: T) -> T {
    let s = sigmoid(z);
    if label {
        pos_weight * (s - T::one())
    } else {
        s
    }
}

/// Binary cross-entropy of probability predictions, summed over devices and averaged
/// over rows. Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn bce_loss(predictions: &Array2<f64>, labels: &Array2<bool>) -> Result<f64> {
    if predictions.dim() != labels.dim() {
        return Err(Error::dims("bce_loss", predictions.dim(), labels.dim()));
    }
    if predictions.nrows() == 0 {
        return Err(Error::param("predictions", "must not be empty"));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels.iter())
        .map(|(&p, &a)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if a {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / predictions.nrows() as f64)
}

/// Device `k` is active iff `p_k >= threshold`.
pub fn hypothesis_test<T: Real>(probabilities: &[T], threshold: f64) -> Result<ActivityVector> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param("threshold", "must lie in (0, 1)"));
    }
    Ok(ActivityVector::new(
        probabilities.iter().map(|p| p.as_f64() >= threshold).collect(),
        f64::NAN,
    ))
}

/// `(2M, K, Ns)` array whose channels `2m` and `2m+1` hold the real and imaginary
/// parts of antenna `m`.
pub fn tensor_to_input<T: Real>(tensor: &DecorrelatedTensor<T>) -> Array3<T> {
    let (m, k, ns) = tensor.dims();
    let data = tensor.data();
    Array3::from_shape_fn((2 * m, k, ns), |(c, i, j)| {
        let v = data[[c / 2, i, j]];
        if c % 2 == 0 {
            v.re
        } else {
            v.im
        }
    })
}

/// Inverse of [`tensor_to_input`].
pub fn input_to_tensor<T: Real>(input: &Array3<T>) -> Result<DecorrelatedTensor<T>> {
    let (c, k, ns) = input.dim();
    if c % 2 != 0 {
        return Err(Error::param("input", "channel count must be even"));
    }
    Ok(DecorrelatedTensor::from_array(Array3::from_shape_fn((c / 2, k, ns), |(m, i, j)| {
        cplx(input[[2 * m, i, j]], input[[2 * m + 1, i, j]])
    })))
}

/// Per-channel affine standardisation, fitted once on training inputs and frozen.
/// Statistics are held at single precision so a reloaded checkpoint reproduces them.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn fit<T: Real>(inputs: &[Array3<T>]) -> Result<Self> {
        let first = inputs.first().ok_or_else(|| Error::param("inputs", "must not be empty"))?;
        let channels = first.dim().0;
        let mut sum = vec![0.0f64; channels];
        let mut sum_sq = vec![0.0f64; channels];
        let mut count = 0usize;
        for x in inputs {
            if x.dim() != first.dim() {
                return Err(Error::dims("standardizer input", first.dim(), x.dim()));
            }
            for (c, plane) in x.outer_iter().enumerate() {
                for v in plane.iter() {
                    let v = v.as_f64();
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += first.dim().1 * first.dim().2;
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 0.0 {
                    var.sqrt() as f32
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Real>(&self, input: &mut Array3<T>) -> Result<()> {
        if input.dim().0 != self.channels() {
            return Err(Error::dims("standardizer channels", self.channels(), input.dim().0));
        }
        for (c, mut plane) in input.outer_iter_mut().enumerate() {
            let mean = T::lit(f64::from(self.mean[c]));
            let inv = T::lit(1.0 / f64::from(self.std[c]));
            plane.mapv_inplace(|v| (v - mean) * inv);
        }
        Ok(())
    }

    /// Flattened standardised network input for one tensor.
    pub fn prepare<T: Real>(&self, tensor: &DecorrelatedTensor<T>) -> Result<Vec<T>> {
        let mut x = tensor_to_input(tensor);
        self.apply(&mut x)?;
        Ok(x.into_iter().collect())
    }
}

/// Outcome of comparing backpropagated gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Largest `|g - g_fd| / max(|g|, |g_fd|, 1e-6)` per layer (0 for parameter-free layers).
    pub per_layer: Vec<f64>,
    pub checked: usize,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.per_layer.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks every parameter gradient of the mean batch loss against a central
/// difference with the given step.
pub fn gradient_check(net: &Network<f64>, batch: &[Sample<'_, f64>], step: f64, pos_weight: f64) -> Result<GradCheck> {
    let (_, grads) = net.batch_gradient(batch, pos_weight, 1)?;
    let mut probe = net.clone();
    let mut per_layer = vec![0.0f64; net.arch.layers.len()];
    let mut checked = 0;
    for idx in 0..net.arch.layers.len() {
        let n_w = net.params.layers[idx].weights.len();
        let n_b = net.params.layers[idx].bias.len();
        for p in 0..(n_w + n_b) {
            let (orig, analytic) = if p < n_w {
                (net.params.layers[idx].weights[p], grads.layers[idx].weights[p])
            } else {
                (net.params.layers[idx].bias[p - n_w], grads.layers[idx].bias[p - n_w])
            };
            let mut eval = |v: f64| -> Result<f64> {
                let l = &mut probe.params.layers[idx];
                if p < n_w {
                    l.weights[p] = v;
                } else {
                    l.bias[p - n_w] = v;
                }
                probe.batch_loss(batch, pos_weight)
            };
            let numeric = (eval(orig + step)? - eval(orig - step)?) / (2.0 * step);
            eval(orig)?;
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            per_layer[idx] = per_layer[idx].max(rel);
            checked += 1;
        }
    }
    Ok(GradCheck { per_layer, checked })
}
