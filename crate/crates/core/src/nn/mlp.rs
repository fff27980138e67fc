//! Fully connected networks with optional batch normalization.
//!
//! Each layer computes `z = x Wᵀ + b`, optionally batch-normalizes `z`
//! (`u = γ (z − μ) / √(σ² + ε) + β`), then applies its activation. Inputs are
//! batches: one sample per row.
//!
//! [`NetworkParams::forward`] is pure. In [`Mode::Train`] it normalizes with
//! the batch statistics and records them in the returned cache; folding them
//! into the running averages is a separate, explicit step
//! ([`NetworkParams::absorb_batch_stats`]) so that a network can be evaluated
//! in train mode without its state moving.

use serde::{Deserialize, Serialize};

use super::matrix::{gemm, DenseMatrix, View};
use super::rng::Rng;
use crate::error::{Error, Result};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    /// Row-wise softmax over the layer's units.
    Softmax,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(units: usize) -> Self {
        Self {
            gamma: vec![1.0; units],
            beta: vec![0.0; units],
            running_mean: vec![0.0; units],
            running_var: vec![1.0; units],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub batchnorm: Option<BatchNorm>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn validate(&self) -> Result<()> {
        let out = self.out_dim();
        if self.bias.len() != out {
            return Err(Error::dim("bias length differs from layer width"));
        }
        if let Some(bn) = &self.batchnorm {
            if [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                .iter()
                .any(|v| v.len() != out)
            {
                return Err(Error::dim("batch norm vectors differ from layer width"));
            }
            if bn.running_var.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::InvalidValue("running variance must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Shape of one layer for construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub units: usize,
    pub activation: Activation,
    pub batchnorm: bool,
}

impl LayerShape {
    pub fn new(units: usize, activation: Activation) -> Self {
        Self {
            units,
            activation,
            batchnorm: false,
        }
    }

    pub fn with_batchnorm(mut self) -> Self {
        self.batchnorm = true;
        self
    }
}

/// Parameters and batch-norm state of a multilayer perceptron.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    layers: Vec<Layer>,
    // Bumped on every mutation of trainable values; a cache records the
    // version it was produced under.
    version: u64,
}

impl PartialEq for NetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl NetworkParams {
    /// Checks that layer dimensions chain and wraps the layers.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network layers"));
        }
        for l in &layers {
            l.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// Glorot-uniform weights, zero biases, identity batch norm.
    pub fn glorot(input_dim: usize, shapes: &[LayerShape], rng: &mut Rng) -> Self {
        let mut fan_in = input_dim;
        let layers = shapes
            .iter()
            .map(|s| {
                let limit = (6.0 / (fan_in + s.units) as f64).sqrt();
                let weight =
                    DenseMatrix::from_fn(s.units, fan_in, |_, _| rng.uniform_range(-limit, limit));
                fan_in = s.units;
                Layer {
                    weight,
                    bias: vec![0.0; s.units],
                    batchnorm: s.batchnorm.then(|| BatchNorm::new(s.units)),
                    activation: s.activation,
                }
            })
            .collect();
        Self { layers, version: 0 }
    }

    /// Same structure with every weight and bias set to zero.
    pub fn zeroed(input_dim: usize, shapes: &[LayerShape]) -> Self {
        let mut fan_in = input_dim;
        let layers = shapes
            .iter()
            .map(|s| {
                let l = Layer {
                    weight: DenseMatrix::zeros(s.units, fan_in),
                    bias: vec![0.0; s.units],
                    batchnorm: s.batchnorm.then(|| BatchNorm::new(s.units)),
                    activation: s.activation,
                };
                fan_in = s.units;
                l
            })
            .collect();
        Self { layers, version: 0 }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[input, hidden..., output]` widths.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Trainable values in canonical order: per layer weight, bias, then
    /// batch-norm gamma and beta when present.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(&l.bias[..]);
            if let Some(bn) = &l.batchnorm {
                out.push(&bn.gamma[..]);
                out.push(&bn.beta[..]);
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            out.push(&mut l.bias[..]);
            if let Some(bn) = &mut l.batchnorm {
                out.push(&mut bn.gamma[..]);
                out.push(&mut bn.beta[..]);
            }
        }
        out
    }

    /// FNV-1a over the bit patterns of every stored value, running
    /// statistics included.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |vals: &[f64]| {
            for v in vals {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        };
        for l in &self.layers {
            eat(l.weight.data());
            eat(&l.bias);
            if let Some(bn) = &l.batchnorm {
                eat(&bn.gamma);
                eat(&bn.beta);
                eat(&bn.running_mean);
                eat(&bn.running_var);
            }
        }
        h
    }

    /// Batched forward pass. `input` holds one sample per row.
    pub fn forward(&self, input: &DenseMatrix, mode: Mode) -> Result<(DenseMatrix, ForwardCache)> {
        if input.cols() != self.input_dim() {
            return Err(Error::dim(format!(
                "input width {} but network expects {}",
                input.cols(),
                self.input_dim()
            )));
        }
        if input.rows() == 0 {
            return Err(Error::Empty("input batch"));
        }
        let batch = input.rows();
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = caches.last().map_or(input, |c| &c.output);
            let out_dim = layer.out_dim();
            let mut z = DenseMatrix::zeros(batch, out_dim);
            gemm(
                batch,
                layer.in_dim(),
                out_dim,
                1.0,
                View::normal(x),
                View::transposed(&layer.weight),
                0.0,
                &mut z,
            );
            for n in 0..batch {
                for (v, b) in z.row_mut(n).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let (mut u, bn_cache) = match &layer.batchnorm {
                None => (z, None),
                Some(bn) => {
                    let (mean, var) = match mode {
                        Mode::Train => column_moments(&z),
                        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                    };
                    let inv_std: Vec<f64> =
                        var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
                    let mut x_hat = z;
                    for n in 0..batch {
                        for (j, v) in x_hat.row_mut(n).iter_mut().enumerate() {
                            *v = (*v - mean[j]) * inv_std[j];
                        }
                    }
                    let mut u = x_hat.clone();
                    for n in 0..batch {
                        for (j, v) in u.row_mut(n).iter_mut().enumerate() {
                            *v = bn.gamma[j] * *v + bn.beta[j];
                        }
                    }
                    (
                        u,
                        Some(BatchNormCache {
                            x_hat,
                            inv_std,
                            batch_mean: mean,
                            batch_var: var,
                        }),
                    )
                }
            };
            apply_activation(layer.activation, &mut u);
            caches.push(LayerCache {
                bn: bn_cache,
                output: u,
            });
        }
        let output = caches.last().expect("at least one layer").output.clone();
        Ok((
            output,
            ForwardCache {
                version: self.version,
                dims: self.layer_dims(),
                mode,
                input: input.clone(),
                layers: caches,
            },
        ))
    }

    /// Eval-mode forward without exposing the cache.
    pub fn infer(&self, input: &DenseMatrix) -> Result<DenseMatrix> {
        self.forward(input, Mode::Eval).map(|(out, _)| out)
    }

    /// Forward for a single sample.
    pub fn forward_vec(&self, input: &[f64], mode: Mode) -> Result<(Vec<f64>, ForwardCache)> {
        let (out, cache) = self.forward(&DenseMatrix::row_vector(input), mode)?;
        Ok((out.into_data(), cache))
    }

    /// Folds a train-mode cache's batch statistics into the running averages.
    ///
    /// Running variance uses the unbiased batch variance; single-sample
    /// batches leave it untouched.
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) -> Result<()> {
        self.check_cache(cache)?;
        if cache.mode != Mode::Train {
            return Ok(());
        }
        let n = cache.input.rows();
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            let (Some(bn), Some(bc)) = (&mut layer.batchnorm, &lc.bn) else {
                continue;
            };
            let m = BATCHNORM_MOMENTUM;
            for j in 0..bn.running_mean.len() {
                bn.running_mean[j] = m * bn.running_mean[j] + (1.0 - m) * bc.batch_mean[j];
                if n > 1 {
                    let unbiased = bc.batch_var[j] * n as f64 / (n - 1) as f64;
                    bn.running_var[j] = m * bn.running_var[j] + (1.0 - m) * unbiased;
                }
            }
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.dims != self.layer_dims() {
            return Err(Error::StaleCache(format!(
                "cache built for dims {:?}, network has {:?}",
                cache.dims,
                self.layer_dims()
            )));
        }
        if cache.version != self.version {
            return Err(Error::StaleCache(
                "network parameters changed after the forward pass".into(),
            ));
        }
        Ok(())
    }

    /// Backpropagates `output_grad` (dL/d output, one row per sample) and
    /// returns parameter gradients summed over the batch together with
    /// dL/d input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &DenseMatrix,
    ) -> Result<(Gradients, DenseMatrix)> {
        self.check_cache(cache)?;
        let batch = cache.input.rows();
        if output_grad.rows() != batch || output_grad.cols() != self.output_dim() {
            return Err(Error::dim(format!(
                "output gradient is {}x{}, expected {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                batch,
                self.output_dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[i];
            let x = if i == 0 {
                &cache.input
            } else {
                &cache.layers[i - 1].output
            };
            activation_backward(layer.activation, &lc.output, &mut upstream);
            let mut du = upstream;
            let (gamma_grad, beta_grad) = match (&layer.batchnorm, &lc.bn) {
                (Some(bn), Some(bc)) => {
                    let width = layer.out_dim();
                    let mut dgamma = vec![0.0; width];
                    let mut dbeta = vec![0.0; width];
                    for n in 0..batch {
                        let (g, xh) = (du.row(n), bc.x_hat.row(n));
                        for j in 0..width {
                            dgamma[j] += g[j] * xh[j];
                            dbeta[j] += g[j];
                        }
                    }
                    // du becomes dL/dz.
                    match cache.mode {
                        Mode::Train => {
                            let nf = batch as f64;
                            let mut sum_dxh = vec![0.0; width];
                            let mut sum_dxh_xh = vec![0.0; width];
                            for n in 0..batch {
                                let (g, xh) = (du.row(n), bc.x_hat.row(n));
                                for j in 0..width {
                                    let dxh = g[j] * bn.gamma[j];
                                    sum_dxh[j] += dxh;
                                    sum_dxh_xh[j] += dxh * xh[j];
                                }
                            }
                            for n in 0..batch {
                                let xh = bc.x_hat.row(n);
                                for (j, v) in du.row_mut(n).iter_mut().enumerate() {
                                    let dxh = *v * bn.gamma[j];
                                    *v = bc.inv_std[j] / nf
                                        * (nf * dxh - sum_dxh[j] - xh[j] * sum_dxh_xh[j]);
                                }
                            }
                        }
                        Mode::Eval => {
                            for n in 0..batch {
                                for (j, v) in du.row_mut(n).iter_mut().enumerate() {
                                    *v *= bn.gamma[j] * bc.inv_std[j];
                                }
                            }
                        }
                    }
                    (Some(dgamma), Some(dbeta))
                }
                _ => (None, None),
            };
            let dz = du;
            let mut dw = DenseMatrix::zeros(layer.out_dim(), layer.in_dim());
            gemm(
                layer.out_dim(),
                batch,
                layer.in_dim(),
                1.0,
                View::transposed(&dz),
                View::normal(x),
                0.0,
                &mut dw,
            );
            let mut db = vec![0.0; layer.out_dim()];
            for n in 0..batch {
                for (b, g) in db.iter_mut().zip(dz.row(n)) {
                    *b += g;
                }
            }
            let mut dx = DenseMatrix::zeros(batch, layer.in_dim());
            gemm(
                batch,
                layer.out_dim(),
                layer.in_dim(),
                1.0,
                View::normal(&dz),
                View::normal(&layer.weight),
                0.0,
                &mut dx,
            );
            grads.push(LayerGradients {
                weight: dw,
                bias: db,
                gamma: gamma_grad,
                beta: beta_grad,
            });
            upstream = dx;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, upstream))
    }
}

fn column_moments(z: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = z.rows() as f64;
    let mut mean = vec![0.0; z.cols()];
    for i in 0..z.rows() {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; z.cols()];
    for i in 0..z.rows() {
        for ((s, v), m) in var.iter_mut().zip(z.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

fn apply_activation(act: Activation, u: &mut DenseMatrix) {
    match act {
        Activation::Identity => {}
        Activation::Tanh => u.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
        Activation::Sigmoid => u.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
        Activation::Softmax => {
            for n in 0..u.rows() {
                softmax_in_place(u.row_mut(n));
            }
        }
    }
}

/// Turns dL/d(activation output) into dL/d(pre-activation) in place.
fn activation_backward(act: Activation, out: &DenseMatrix, grad: &mut DenseMatrix) {
    match act {
        Activation::Identity => {}
        Activation::Tanh => {
            for (g, a) in grad.data_mut().iter_mut().zip(out.data()) {
                *g *= 1.0 - a * a;
            }
        }
        Activation::Sigmoid => {
            for (g, a) in grad.data_mut().iter_mut().zip(out.data()) {
                *g *= a * (1.0 - a);
            }
        }
        Activation::Softmax => {
            for n in 0..out.rows() {
                softmax_backward_in_place(out.row(n), grad.row_mut(n));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `g ← p ⊙ (g − ⟨g, p⟩)`, the softmax Jacobian-vector product.
pub(crate) fn softmax_backward_in_place(p: &[f64], g: &mut [f64]) {
    let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
    for (gi, pi) in g.iter_mut().zip(p) {
        *gi = pi * (*gi - dot);
    }
}

#[derive(Debug, Clone)]
struct BatchNormCache {
    x_hat: DenseMatrix,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    bn: Option<BatchNormCache>,
    output: DenseMatrix,
}

/// Everything a backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    dims: Vec<usize>,
    mode: Mode,
    input: DenseMatrix,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Output of the last layer.
    pub fn output(&self) -> &DenseMatrix {
        &self.layers.last().expect("at least one layer").output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

/// Gradients (or any per-parameter quantity) shaped like a network's
/// trainable values.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weight: DenseMatrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                    gamma: l.batchnorm.as_ref().map(|_| vec![0.0; l.out_dim()]),
                    beta: l.batchnorm.as_ref().map(|_| vec![0.0; l.out_dim()]),
                })
                .collect(),
        }
    }

    /// Same canonical order as [`NetworkParams::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(&l.bias[..]);
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.push(&g[..]);
                out.push(&b[..]);
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            out.push(&mut l.bias[..]);
            if let (Some(g), Some(b)) = (&mut l.gamma, &mut l.beta) {
                out.push(&mut g[..]);
                out.push(&mut b[..]);
            }
        }
        out
    }

    /// True when the slice layout equals the network's.
    pub fn mirrors(&self, params: &NetworkParams) -> bool {
        let a = self.slices();
        let b = params.param_slices();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        let mut mine = self.slices_mut();
        let theirs = other.slices();
        if mine.len() != theirs.len() || mine.iter().zip(&theirs).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::dim("gradient shapes differ"));
        }
        for (a, b) in mine.iter_mut().zip(theirs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
