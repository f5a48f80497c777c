//! Exact forward/backward passes for small fully-connected classifiers.
//!
//! Parameters live in one flat [`ParamVector`]. Layer `l` with `a` inputs
//! and `b` outputs occupies `a * b` weights (row-major, one row per output
//! unit) followed by `b` biases. Hidden layers use the configured
//! activation; the output layer feeds a softmax cross-entropy loss averaged
//! over the batch.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidSpec(format!("unknown activation {other:?}"))),
        }
    }
}

/// Layer sizes `[D, h1, ..., C]` plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(
                "need at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidSpec("layer sizes must be positive".into()));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::InvalidSpec("need at least two classes".into()));
        }
        Ok(Self {
            layer_sizes,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total parameter count `d`.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offset of each layer's weight block in the flat vector.
    fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut at = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(at);
            at += w[0] * w[1] + w[1];
        }
        offsets
    }
}

/// Flat parameter (or gradient) vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self + other`, component-wise.
    pub fn added(&self, other: &[f64]) -> Self {
        Self(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A mini-batch: `m` feature rows, their observed labels and noisy flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    is_noisy: Vec<bool>,
}

impl Batch {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, is_noisy: Vec<bool>) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return Err(Error::InvalidDataset("batch must hold at least one sample".into()));
        }
        if dim == 0 || features.len() != m * dim {
            return Err(Error::Shape {
                what: "batch features",
                expected: m * dim,
                found: features.len(),
            });
        }
        if is_noisy.len() != m {
            return Err(Error::Shape {
                what: "batch noisy flags",
                expected: m,
                found: is_noisy.len(),
            });
        }
        Ok(Self {
            features,
            dim,
            labels,
            is_noisy,
        })
    }

    /// Batch with every sample flagged clean.
    pub fn clean(features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        let m = labels.len();
        Self::new(features, dim, labels, vec![false; m])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_noisy(&self) -> &[bool] {
        &self.is_noisy
    }

    /// Batch holding only sample `i`.
    pub fn single(&self, i: usize) -> Batch {
        Batch {
            features: self.row(i).to_vec(),
            dim: self.dim,
            labels: vec![self.labels[i]],
            is_noisy: vec![self.is_noisy[i]],
        }
    }
}

/// Row-major `m x C` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    values: Vec<f64>,
    classes: usize,
}

impl Logits {
    pub fn rows(&self) -> usize {
        self.values.len() / self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn argmax(&self) -> Vec<usize> {
        (0..self.rows()).map(|i| argmax(self.row(i))).collect()
    }
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// He-normal initialisation: weights ~ N(0, 2/fan_in), biases zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        params.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector(params)
}

/// Mean cross-entropy over the batch together with the raw logits.
pub fn forward_loss(params: &ParamVector, batch: &Batch, spec: &ModelSpec) -> Result<(f64, Logits)> {
    check_shapes(params, batch, spec)?;
    let mut net = Workspace::new(spec);
    let classes = spec.num_classes();
    let mut logits = Vec::with_capacity(batch.len() * classes);
    let mut total = 0.0;
    for i in 0..batch.len() {
        net.forward(params, batch.row(i))?;
        let out = net.output();
        total += cross_entropy(out, batch.labels[i]);
        logits.extend_from_slice(out);
    }
    Ok((total / batch.len() as f64, Logits { values: logits, classes }))
}

/// Exact gradient of [`forward_loss`] with respect to the parameters.
pub fn backward(params: &ParamVector, batch: &Batch, spec: &ModelSpec) -> Result<ParamVector> {
    loss_and_gradient(params, batch, spec).map(|(_, g)| g)
}

/// Loss and gradient from a single pass.
pub fn loss_and_gradient(params: &ParamVector, batch: &Batch, spec: &ModelSpec) -> Result<(f64, ParamVector)> {
    check_shapes(params, batch, spec)?;
    let mut sums = [vec![0.0; params.len()]];
    let loss = accumulate(params, batch, spec, &mut sums, |_| 0)?;
    let [grad] = sums;
    let grad = finish_gradient(grad, batch.len())?;
    Ok((loss / batch.len() as f64, grad))
}

/// Gradient contributions of the clean and noisy samples of a batch.
///
/// Both halves share the full-batch `1/m` normaliser, so
/// `g_clean + g_noise` equals [`backward`] up to rounding.
pub fn split_gradient(params: &ParamVector, batch: &Batch, spec: &ModelSpec) -> Result<(ParamVector, ParamVector)> {
    check_shapes(params, batch, spec)?;
    let mut sums = [vec![0.0; params.len()], vec![0.0; params.len()]];
    let noisy = batch.is_noisy();
    accumulate(params, batch, spec, &mut sums, |i| usize::from(noisy[i]))?;
    let [clean, noise] = sums;
    Ok((
        finish_gradient(clean, batch.len())?,
        finish_gradient(noise, batch.len())?,
    ))
}

/// Predicted class for each row of a row-major `m x D` feature matrix.
pub fn predict(params: &ParamVector, spec: &ModelSpec, features: &[f64]) -> Result<Vec<usize>> {
    if params.len() != spec.param_count() {
        return Err(Error::Shape {
            what: "parameters",
            expected: spec.param_count(),
            found: params.len(),
        });
    }
    let dim = spec.input_dim();
    if !features.len().is_multiple_of(dim) {
        return Err(Error::Shape {
            what: "feature matrix",
            expected: dim,
            found: features.len() % dim,
        });
    }
    let mut net = Workspace::new(spec);
    features
        .chunks_exact(dim)
        .map(|row| {
            net.forward(params, row)?;
            Ok(argmax(net.output()))
        })
        .collect()
}

fn check_shapes(params: &ParamVector, batch: &Batch, spec: &ModelSpec) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::Shape {
            what: "parameters",
            expected: spec.param_count(),
            found: params.len(),
        });
    }
    if batch.dim() != spec.input_dim() {
        return Err(Error::Shape {
            what: "input dimension",
            expected: spec.input_dim(),
            found: batch.dim(),
        });
    }
    let classes = spec.num_classes();
    if let Some((index, &label)) = batch.labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            classes,
        });
    }
    Ok(())
}

fn finish_gradient(mut sum: Vec<f64>, m: usize) -> Result<ParamVector> {
    let scale = 1.0 / m as f64;
    for (index, g) in sum.iter_mut().enumerate() {
        *g *= scale;
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { index });
        }
    }
    Ok(ParamVector(sum))
}

/// Adds each sample's loss gradient into `sums[route(i)]`; returns the
/// summed loss.
fn accumulate<const N: usize>(
    params: &ParamVector,
    batch: &Batch,
    spec: &ModelSpec,
    sums: &mut [Vec<f64>; N],
    route: impl Fn(usize) -> usize,
) -> Result<f64> {
    let mut net = Workspace::new(spec);
    let mut total = 0.0;
    for i in 0..batch.len() {
        net.forward(params, batch.row(i))?;
        let label = batch.labels[i];
        total += cross_entropy(net.output(), label);
        net.backward(params, label, &mut sums[route(i)]);
    }
    Ok(total)
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-sample activation buffers reused across a batch.
struct Workspace<'a> {
    spec: &'a ModelSpec,
    offsets: Vec<usize>,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`
    /// (post-activation for hidden layers, logits for the last).
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(spec: &'a ModelSpec) -> Self {
        let sizes = &spec.layer_sizes;
        let widest = sizes.iter().copied().max().unwrap_or(0);
        Self {
            spec,
            offsets: spec.offsets(),
            acts: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            pre: sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }

    fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    fn forward(&mut self, params: &[f64], input: &[f64]) -> Result<()> {
        let sizes = &self.spec.layer_sizes;
        let last = self.spec.num_layers() - 1;
        self.acts[0].copy_from_slice(input);
        for l in 0..=last {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let base = self.offsets[l];
            let weights = &params[base..base + n_in * n_out];
            let biases = &params[base + n_in * n_out..base + n_in * n_out + n_out];
            let (before, after) = self.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            let pre = &mut self.pre[l];
            for j in 0..n_out {
                let row = &weights[j * n_in..(j + 1) * n_in];
                let z = biases[j] + dot(row, input);
                if !z.is_finite() {
                    return Err(Error::NonFiniteActivation { layer: l });
                }
                pre[j] = z;
                out[j] = if l == last { z } else { self.spec.activation.apply(z) };
            }
        }
        Ok(())
    }

    /// Adds d loss / d params for the sample currently held in the buffers.
    fn backward(&mut self, params: &[f64], label: usize, grad: &mut [f64]) {
        let sizes = &self.spec.layer_sizes;
        let act = self.spec.activation;

        // softmax - onehot
        let logits = self.acts.last().unwrap();
        let lse = log_sum_exp(logits);
        self.delta.clear();
        self.delta.extend(logits.iter().map(|z| (z - lse).exp()));
        self.delta[label] -= 1.0;

        for l in (0..self.spec.num_layers()).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let base = self.offsets[l];
            let input = &self.acts[l];
            {
                let (gw, gb) = grad[base..base + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for j in 0..n_out {
                    let d = self.delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    gb[j] += d;
                    for (g, x) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let weights = &params[base..base + n_in * n_out];
            self.delta_prev.clear();
            self.delta_prev.resize(n_in, 0.0);
            for j in 0..n_out {
                let d = self.delta[j];
                if d == 0.0 {
                    continue;
                }
                for (acc, w) in self.delta_prev.iter_mut().zip(&weights[j * n_in..(j + 1) * n_in]) {
                    *acc += d * w;
                }
            }
            let pre = &self.pre[l - 1];
            for (i, acc) in self.delta_prev.iter_mut().enumerate() {
                *acc *= act.derivative(pre[i], input[i]);
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
