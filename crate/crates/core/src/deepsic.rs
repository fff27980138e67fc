//! DeepSIC: iterative soft interference cancellation with each per-user
//! update replaced by a small classifier.
//!
//! Layer `q` holds one kernel per user. Kernel `(q, k)` sees the received
//! signal together with the layer `q − 1` beliefs of every other user (in
//! ascending user order) and outputs a distribution over the constellation
//! for user `k`. The first layer starts from uniform beliefs.

use serde::{Deserialize, Serialize};

use crate::channels::{Constellation, ReceivedSignal, SymbolVector};
use crate::detect::{argmax, Detector, SoftBelief};
use crate::error::{Error, Result};
use crate::nn::gradcheck::{check_network, GradCheckReport};
use crate::nn::loss::LOG_CLAMP;
use crate::nn::{
    Activation, AdamConfig, AdamState, DenseMatrix, Direction, ForwardCache, Gradients,
    LayerShape, Mode, NetworkCheckpoint, NetworkParams, Rng,
};

pub const DEFAULT_LAYERS: usize = 5;
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct DeepSicNet {
    users: usize,
    antennas: usize,
    constellation: Constellation,
    /// `kernels[q][k]`.
    kernels: Vec<Vec<NetworkParams>>,
}

/// Receiver-side training pairs. `labels` holds constellation indices,
/// `K` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub signals: DenseMatrix,
    pub labels: Vec<usize>,
    pub users: usize,
}

impl LabeledBatch {
    pub fn from_pairs(
        pairs: &[(ReceivedSignal, SymbolVector)],
        constellation: &Constellation,
    ) -> Result<Self> {
        let (first_y, first_s) = pairs.first().ok_or(Error::Empty("labeled batch"))?;
        let (r, k) = (first_y.len(), first_s.len());
        let mut signals = DenseMatrix::zeros(pairs.len(), r);
        let mut labels = Vec::with_capacity(pairs.len() * k);
        for (n, (y, s)) in pairs.iter().enumerate() {
            if y.len() != r || s.len() != k {
                return Err(Error::dim("inconsistent pair dimensions in batch"));
            }
            signals.row_mut(n).copy_from_slice(&y.0);
            labels.extend(constellation.indices_of(s)?);
        }
        Ok(Self { signals, labels, users: k })
    }

    /// Rows of `symbols` are symbol values aligned with rows of `signals`.
    pub fn from_matrices(
        signals: DenseMatrix,
        symbols: &DenseMatrix,
        constellation: &Constellation,
    ) -> Result<Self> {
        if signals.rows() != symbols.rows() {
            return Err(Error::dim("signal and symbol row counts differ"));
        }
        if signals.rows() == 0 {
            return Err(Error::Empty("labeled batch"));
        }
        let labels = symbols
            .data()
            .iter()
            .map(|&v| {
                constellation
                    .index_of(v)
                    .ok_or_else(|| Error::InvalidValue(format!("{v} is not a constellation point")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            signals,
            labels,
            users: symbols.cols(),
        })
    }

    pub fn len(&self) -> usize {
        self.signals.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, n: usize, k: usize) -> usize {
        self.labels[n * self.users + k]
    }

    /// The samples at `rows`, in that order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut signals = DenseMatrix::zeros(rows.len(), self.signals.cols());
        let mut labels = Vec::with_capacity(rows.len() * self.users);
        for (i, &n) in rows.iter().enumerate() {
            signals.row_mut(i).copy_from_slice(self.signals.row(n));
            labels.extend_from_slice(&self.labels[n * self.users..(n + 1) * self.users]);
        }
        Self { signals, labels, users: self.users }
    }

    pub fn concat(batches: &[LabeledBatch]) -> Result<Self> {
        let first = batches.first().ok_or(Error::Empty("batch list"))?;
        let refs: Vec<&DenseMatrix> = batches.iter().map(|b| &b.signals).collect();
        if batches.iter().any(|b| b.users != first.users) {
            return Err(Error::dim("batches disagree on user count"));
        }
        Ok(Self {
            signals: DenseMatrix::vstack(&refs)?,
            labels: batches.iter().flat_map(|b| b.labels.iter().copied()).collect(),
            users: first.users,
        })
    }
}

/// Beliefs of every layer for a batch: `beliefs[q][k]` is `N × |𝒮|`.
#[derive(Debug, Clone)]
pub struct DeepSicPass {
    pub beliefs: Vec<Vec<DenseMatrix>>,
    caches: Vec<Vec<ForwardCache>>,
}

impl DeepSicPass {
    pub fn final_layer(&self) -> &[DenseMatrix] {
        self.beliefs.last().expect("at least one layer")
    }

    /// Beliefs of sample `n` at layer `q`.
    pub fn belief(&self, q: usize, n: usize) -> SoftBelief {
        SoftBelief {
            probs: self.beliefs[q].iter().map(|m| m.row(n).to_vec()).collect(),
        }
    }

    /// Hard decisions (constellation indices) from layer `q`, `K` per sample.
    pub fn hard_indices(&self, q: usize) -> Vec<Vec<usize>> {
        let layer = &self.beliefs[q];
        (0..layer[0].rows())
            .map(|n| layer.iter().map(|m| argmax(m.row(n))).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossLayers {
    /// Sum the cross entropy of every layer.
    #[default]
    All,
    /// Only the final layer contributes.
    Last,
}

impl DeepSicNet {
    pub fn new(
        layers: usize,
        users: usize,
        antennas: usize,
        hidden: usize,
        constellation: Constellation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if layers == 0 || users == 0 || antennas == 0 || hidden == 0 {
            return Err(Error::InvalidValue("DeepSIC needs Q, K, R and hidden width >= 1".into()));
        }
        let input = antennas + (users - 1) * constellation.len();
        let shapes = [
            LayerShape::new(hidden, Activation::Tanh),
            LayerShape::new(constellation.len(), Activation::Softmax),
        ];
        let kernels = (0..layers)
            .map(|_| {
                (0..users)
                    .map(|_| NetworkParams::glorot(input, &shapes, rng))
                    .collect()
            })
            .collect();
        Ok(Self {
            users,
            antennas,
            constellation,
            kernels,
        })
    }

    /// Default layout: 5 layers, 64 hidden units per kernel.
    pub fn standard(users: usize, antennas: usize, constellation: Constellation, rng: &mut Rng) -> Result<Self> {
        Self::new(DEFAULT_LAYERS, users, antennas, DEFAULT_HIDDEN, constellation, rng)
    }

    pub fn from_kernels(
        users: usize,
        antennas: usize,
        constellation: Constellation,
        kernels: Vec<Vec<NetworkParams>>,
    ) -> Result<Self> {
        let input = antennas + users.saturating_sub(1) * constellation.len();
        if kernels.is_empty() || kernels.iter().any(|l| l.len() != users) {
            return Err(Error::dim("kernel grid must be Q x K with Q >= 1"));
        }
        let reference = kernels[0][0].layer_dims();
        let activations = kernels[0][0].activations();
        for kernel in kernels.iter().flatten() {
            if kernel.layer_dims() != reference || kernel.activations() != activations {
                return Err(Error::dim("DeepSIC kernels must be structurally identical"));
            }
        }
        if kernels[0][0].input_dim() != input || kernels[0][0].output_dim() != constellation.len() {
            return Err(Error::dim(format!(
                "kernel dims {reference:?} do not fit R = {antennas}, K = {users}"
            )));
        }
        if activations.last() != Some(&Activation::Softmax) {
            return Err(Error::InvalidValue("DeepSIC kernels need a softmax head".into()));
        }
        Ok(Self {
            users,
            antennas,
            constellation,
            kernels,
        })
    }

    pub fn layers(&self) -> usize {
        self.kernels.len()
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn kernels(&self) -> &[Vec<NetworkParams>] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut [Vec<NetworkParams>] {
        &mut self.kernels
    }

    pub fn kernel_input_dim(&self) -> usize {
        self.kernels[0][0].input_dim()
    }

    pub fn checksum(&self) -> u64 {
        self.kernels
            .iter()
            .flatten()
            .fold(0xcbf2_9ce4_8422_2325u64, |acc, k| {
                (acc ^ k.checksum()).wrapping_mul(0x0000_0100_0000_01b3)
            })
    }

    fn kernel_input(&self, signals: &DenseMatrix, previous: &[DenseMatrix], k: usize) -> DenseMatrix {
        let n = signals.rows();
        let m = self.constellation.len();
        let mut input = DenseMatrix::zeros(n, self.kernel_input_dim());
        for row in 0..n {
            let dst = input.row_mut(row);
            dst[..self.antennas].copy_from_slice(signals.row(row));
            let mut at = self.antennas;
            for (j, belief) in previous.iter().enumerate() {
                if j != k {
                    dst[at..at + m].copy_from_slice(belief.row(row));
                    at += m;
                }
            }
        }
        input
    }

    /// Runs every layer on a batch of received signals (`N × R`).
    pub fn forward_batch(&self, signals: &DenseMatrix, mode: Mode) -> Result<DeepSicPass> {
        if signals.cols() != self.antennas {
            return Err(Error::dim(format!(
                "received {} values per signal, expected {}",
                signals.cols(),
                self.antennas
            )));
        }
        let n = signals.rows();
        let m = self.constellation.len();
        let mut previous = vec![DenseMatrix::from_fn(n, m, |_, _| 1.0 / m as f64); self.users];
        let mut beliefs = Vec::with_capacity(self.layers());
        let mut caches = Vec::with_capacity(self.layers());
        for layer in &self.kernels {
            let mut outs = Vec::with_capacity(self.users);
            let mut layer_caches = Vec::with_capacity(self.users);
            for (k, kernel) in layer.iter().enumerate() {
                let input = self.kernel_input(signals, &previous, k);
                let (out, cache) = kernel.forward(&input, mode)?;
                outs.push(out);
                layer_caches.push(cache);
            }
            beliefs.push(outs.clone());
            caches.push(layer_caches);
            previous = outs;
        }
        Ok(DeepSicPass { beliefs, caches })
    }

    /// Final-layer beliefs for one signal.
    pub fn forward(&self, y: &ReceivedSignal, mode: Mode) -> Result<SoftBelief> {
        let pass = self.forward_batch(&DenseMatrix::row_vector(&y.0), mode)?;
        Ok(pass.belief(self.layers() - 1, 0))
    }

    pub fn detect(&self, y: &ReceivedSignal) -> Result<SymbolVector> {
        Ok(self.forward(y, Mode::Eval)?.hard(&self.constellation))
    }

    /// Layer-summed cross entropy averaged over the batch, and its gradient
    /// for every kernel.
    pub fn loss_and_gradients(
        &self,
        batch: &LabeledBatch,
        loss_layers: LossLayers,
    ) -> Result<(f64, Vec<Vec<Gradients>>)> {
        let (loss, grads, _) = self.backprop(batch, loss_layers, false)?;
        Ok((loss, grads))
    }

    /// As [`Self::loss_and_gradients`], plus the gradient of the loss with
    /// respect to the received signals (`N × R`).
    pub fn loss_gradients_and_signal_grad(
        &self,
        batch: &LabeledBatch,
        loss_layers: LossLayers,
    ) -> Result<(f64, Vec<Vec<Gradients>>, DenseMatrix)> {
        let (loss, grads, signal) = self.backprop(batch, loss_layers, true)?;
        Ok((loss, grads, signal.expect("requested")))
    }

    fn backprop(
        &self,
        batch: &LabeledBatch,
        loss_layers: LossLayers,
        want_signal: bool,
    ) -> Result<(f64, Vec<Vec<Gradients>>, Option<DenseMatrix>)> {
        if batch.is_empty() {
            return Err(Error::Empty("labeled batch"));
        }
        if batch.users != self.users {
            return Err(Error::dim("batch user count differs from the detector"));
        }
        let pass = self.forward_batch(&batch.signals, Mode::Train)?;
        let n = batch.len();
        let m = self.constellation.len();
        let q_total = self.layers();
        let scale = 1.0 / n as f64;
        let mut loss = 0.0;

        let mut grads: Vec<Vec<Gradients>> = Vec::with_capacity(q_total);
        let mut signal_grad = want_signal.then(|| DenseMatrix::zeros(n, self.antennas));
        // Gradient arriving at each user's output of the layer being processed.
        let mut incoming = vec![DenseMatrix::zeros(n, m); self.users];
        for q in (0..q_total).rev() {
            let counts = loss_layers == LossLayers::All || q + 1 == q_total;
            if counts {
                for (k, g) in incoming.iter_mut().enumerate() {
                    let probs = &pass.beliefs[q][k];
                    for row in 0..n {
                        let t = batch.label(row, k);
                        let p = probs.get(row, t).max(LOG_CLAMP);
                        loss -= p.ln() * scale;
                        let cur = g.get(row, t);
                        g.set(row, t, cur - scale / p);
                    }
                }
            }
            let mut below = vec![DenseMatrix::zeros(n, m); self.users];
            let mut layer_grads = Vec::with_capacity(self.users);
            for k in 0..self.users {
                let (g, input_grad) = self.kernels[q][k].backward(&pass.caches[q][k], &incoming[k])?;
                layer_grads.push(g);
                if let Some(sg) = signal_grad.as_mut() {
                    for row in 0..n {
                        for (d, s) in sg.row_mut(row).iter_mut().zip(&input_grad.row(row)[..self.antennas]) {
                            *d += s;
                        }
                    }
                }
                if q > 0 {
                    let mut at = self.antennas;
                    for (j, dst) in below.iter_mut().enumerate() {
                        if j == k {
                            continue;
                        }
                        for row in 0..n {
                            let src = &input_grad.row(row)[at..at + m];
                            for (d, s) in dst.row_mut(row).iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        at += m;
                    }
                }
            }
            grads.push(layer_grads);
            incoming = below;
        }
        grads.reverse();
        Ok((loss, grads, signal_grad))
    }

    /// Loss only, for evaluation and finite differences.
    pub fn loss(&self, batch: &LabeledBatch, loss_layers: LossLayers) -> Result<f64> {
        let pass = self.forward_batch(&batch.signals, Mode::Train)?;
        let q_total = self.layers();
        let mut loss = 0.0;
        for q in 0..q_total {
            if loss_layers == LossLayers::Last && q + 1 != q_total {
                continue;
            }
            for k in 0..self.users {
                for n in 0..batch.len() {
                    loss -= pass.beliefs[q][k].get(n, batch.label(n, k)).max(LOG_CLAMP).ln();
                }
            }
        }
        Ok(loss / batch.len() as f64)
    }
}

impl Detector for DeepSicNet {
    fn detect(&self, y: &ReceivedSignal) -> Result<SymbolVector> {
        DeepSicNet::detect(self, y)
    }

    fn detect_batch(&self, ys: &[ReceivedSignal]) -> Result<Vec<SymbolVector>> {
        if ys.is_empty() {
            return Ok(Vec::new());
        }
        let mut signals = DenseMatrix::zeros(ys.len(), self.antennas);
        for (n, y) in ys.iter().enumerate() {
            if y.len() != self.antennas {
                return Err(Error::dim("received signal length"));
            }
            signals.row_mut(n).copy_from_slice(&y.0);
        }
        let pass = self.forward_batch(&signals, Mode::Eval)?;
        Ok(pass
            .hard_indices(self.layers() - 1)
            .iter()
            .map(|idx| self.constellation.vector_from_indices(idx))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepSicTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub loss_layers: LossLayers,
}

impl Default for DeepSicTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 64,
            adam: AdamConfig::default(),
            loss_layers: LossLayers::All,
        }
    }
}

/// A detector with one Adam state per kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSicTrainer {
    pub net: DeepSicNet,
    pub adam: Vec<Vec<AdamState>>,
    pub loss_layers: LossLayers,
}

impl DeepSicTrainer {
    pub fn new(net: DeepSicNet, adam: AdamConfig, loss_layers: LossLayers) -> Self {
        let adam = net
            .kernels
            .iter()
            .map(|l| l.iter().map(|k| AdamState::new(k, adam)).collect())
            .collect();
        Self {
            net,
            adam,
            loss_layers,
        }
    }

    /// One Adam step on `batch`; returns the loss before the step.
    pub fn step(&mut self, batch: &LabeledBatch) -> Result<f64> {
        let (loss, grads) = self.net.loss_and_gradients(batch, self.loss_layers)?;
        self.apply(&grads)?;
        Ok(loss)
    }

    pub fn apply(&mut self, grads: &[Vec<Gradients>]) -> Result<()> {
        for ((layer, states), layer_grads) in self.net.kernels.iter_mut().zip(&mut self.adam).zip(grads) {
            for ((kernel, state), g) in layer.iter_mut().zip(states.iter_mut()).zip(layer_grads) {
                state.step(kernel, g, Direction::Descend)?;
            }
        }
        Ok(())
    }
}

/// Per-epoch mean minibatch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub epoch_losses: Vec<f64>,
}

/// Shuffled minibatch training for `cfg.epochs` passes over `data`.
pub fn train_deepsic(
    net: DeepSicNet,
    data: &LabeledBatch,
    cfg: &DeepSicTrainConfig,
    rng: &mut Rng,
) -> Result<(DeepSicNet, TrainTrace)> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidValue("batch size must be positive".into()));
    }
    let mut trainer = DeepSicTrainer::new(net, cfg.adam, cfg.loss_layers);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            total += trainer.step(&data.select(chunk))?;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok((trainer.net, TrainTrace { epoch_losses }))
}

/// Checkpoint wrapper: the kernel grid in the network checkpoint format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSicCheckpoint {
    #[serde(rename = "Q")]
    pub layers: usize,
    #[serde(rename = "K")]
    pub users: usize,
    pub antennas: usize,
    pub constellation: Constellation,
    pub kernels: Vec<Vec<NetworkCheckpoint>>,
}

impl DeepSicCheckpoint {
    pub fn new(net: &DeepSicNet) -> Self {
        Self {
            layers: net.layers(),
            users: net.users,
            antennas: net.antennas,
            constellation: net.constellation.clone(),
            kernels: net
                .kernels
                .iter()
                .map(|l| l.iter().map(|k| NetworkCheckpoint::new(k, None)).collect())
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn restore(self) -> Result<DeepSicNet> {
        if self.kernels.len() != self.layers {
            return Err(Error::dim("checkpoint Q disagrees with its kernel grid"));
        }
        let kernels = self
            .kernels
            .into_iter()
            .map(|l| l.into_iter().map(|k| k.restore().map(|(p, _)| p)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        DeepSicNet::from_kernels(self.users, self.antennas, self.constellation, kernels)
    }
}

/// Finite-difference check of the full layer-summed loss on a tiny detector
/// (Q = 2, K = 2, hidden 4).
pub fn gradient_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let mut net = DeepSicNet::new(2, 2, 2, 4, Constellation::bpsk(), &mut rng)?;
    let n = 6;
    let signals = DenseMatrix::from_fn(n, 2, |_, _| 1.5 * rng.normal());
    let labels = (0..n * 2).map(|_| rng.index(2)).collect();
    let batch = LabeledBatch { signals, labels, users: 2 };
    let (_, grads) = net.loss_and_gradients(&batch, LossLayers::All)?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for q in 0..2 {
        for k in 0..2 {
            let mut kernel = net.kernels[q][k].clone();
            let report = check_network("kernel", &mut kernel, &grads[q][k], |p| {
                net.kernels[q][k] = p.clone();
                net.loss(&batch, LossLayers::All).expect("fixed shapes")
            });
            net.kernels[q][k] = kernel;
            worst = worst.max(report.max_relative_error);
            checked += report.checked;
        }
    }
    Ok(GradCheckReport {
        name: "deepsic end-to-end loss".into(),
        checked,
        max_relative_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{ChannelKind, ChannelModel};
    use std::f64::consts::LN_2;

    fn zero_net(q: usize, k: usize, r: usize) -> DeepSicNet {
        let mut net = DeepSicNet::new(q, k, r, 8, Constellation::bpsk(), &mut Rng::new(0)).unwrap();
        for kernel in net.kernels.iter_mut().flatten() {
            for l in kernel.layers_mut() {
                l.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
            }
        }
        net
    }

    fn noiseless_batch(model: &ChannelModel, n: usize, rng: &mut Rng) -> LabeledBatch {
        let pairs: Vec<_> = (0..n)
            .map(|_| {
                let s = model.constellation().random_vector(model.users(), rng);
                (ReceivedSignal(model.mean_output(&s).unwrap()), s)
            })
            .collect();
        LabeledBatch::from_pairs(&pairs, model.constellation()).unwrap()
    }

    #[test]
    fn kernel_input_dimension() {
        let net = DeepSicNet::standard(4, 4, Constellation::bpsk(), &mut Rng::new(1)).unwrap();
        assert_eq!(net.kernel_input_dim(), 10);
        assert_eq!(net.layers(), 5);
        assert_eq!(net.kernels()[0][0].layer_dims(), vec![10, 64, 2]);
    }

    #[test]
    fn zero_weights_give_uniform_beliefs_everywhere() {
        let net = zero_net(3, 4, 4);
        let pass = net
            .forward_batch(&DenseMatrix::from_fn(5, 4, |i, j| (i + j) as f64 - 3.0), Mode::Eval)
            .unwrap();
        for layer in &pass.beliefs {
            for m in layer {
                assert!(m.data().iter().all(|&p| p == 0.5));
            }
        }
    }

    #[test]
    fn zero_net_loss_is_q_k_ln2() {
        let net = zero_net(5, 4, 4);
        let batch = LabeledBatch {
            signals: DenseMatrix::row_vector(&[0.3, -1.0, 2.0, 0.1]),
            labels: vec![0, 1, 1, 0],
            users: 4,
        };
        let (loss, _) = net.loss_and_gradients(&batch, LossLayers::All).unwrap();
        assert!((loss - 20.0 * LN_2).abs() < 1e-12);
        let last = net.loss(&batch, LossLayers::Last).unwrap();
        assert!((last - 4.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let net = zero_net(2, 2, 2);
        let s = net.detect(&ReceivedSignal(vec![1.0, 1.0])).unwrap();
        assert_eq!(s.0, vec![-1.0, -1.0]);
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let report = gradient_check(3).unwrap();
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn last_layer_loss_gradient_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let mut net = DeepSicNet::new(2, 3, 2, 3, Constellation::bpsk(), &mut rng).unwrap();
        let batch = LabeledBatch {
            signals: DenseMatrix::from_fn(4, 2, |_, _| rng.normal()),
            labels: (0..12).map(|_| rng.index(2)).collect(),
            users: 3,
        };
        let (_, grads) = net.loss_and_gradients(&batch, LossLayers::Last).unwrap();
        let mut kernel = net.kernels[0][1].clone();
        let report = check_network("first layer via last loss", &mut kernel, &grads[0][1], |p| {
            net.kernels[0][1] = p.clone();
            net.loss(&batch, LossLayers::Last).unwrap()
        });
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn signal_gradient_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let net = DeepSicNet::new(2, 2, 3, 5, Constellation::bpsk(), &mut rng).unwrap();
        let n = 3;
        let signals = DenseMatrix::from_fn(n, 3, |_, _| rng.normal());
        let labels: Vec<usize> = (0..n * 2).map(|_| rng.index(2)).collect();
        let batch = LabeledBatch { signals: signals.clone(), labels: labels.clone(), users: 2 };
        let (_, _, sg) = net.loss_gradients_and_signal_grad(&batch, LossLayers::All).unwrap();
        let report = crate::nn::gradcheck::check_vector("signals", signals.data(), sg.data(), |x| {
            let b = LabeledBatch {
                signals: DenseMatrix::from_vec(n, 3, x.to_vec()).unwrap(),
                labels: labels.clone(),
                users: 2,
            };
            net.loss(&b, LossLayers::All).unwrap()
        });
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn ten_steps_reduce_fixed_batch_loss() {
        let model = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 8.0).unwrap();
        let mut rng = Rng::new(4);
        let net = DeepSicNet::standard(4, 4, Constellation::bpsk(), &mut rng).unwrap();
        let batch = noiseless_batch(&model, 64, &mut rng);
        let mut trainer = DeepSicTrainer::new(net, AdamConfig::default(), LossLayers::All);
        let before = trainer.net.loss(&batch, LossLayers::All).unwrap();
        for _ in 0..10 {
            trainer.step(&batch).unwrap();
        }
        let after = trainer.net.loss(&batch, LossLayers::All).unwrap();
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn beliefs_are_normalized_at_every_layer() {
        let mut rng = Rng::new(6);
        let net = DeepSicNet::standard(4, 4, Constellation::bpsk(), &mut rng).unwrap();
        let signals = DenseMatrix::from_fn(200, 4, |_, _| 3.0 * rng.normal());
        let pass = net.forward_batch(&signals, Mode::Eval).unwrap();
        for q in 0..net.layers() {
            for n in 0..200 {
                assert!(pass.belief(q, n).normalization_error() < 1e-9);
            }
        }
    }

    #[test]
    fn batched_detection_matches_single() {
        let mut rng = Rng::new(6);
        let net = DeepSicNet::standard(4, 4, Constellation::bpsk(), &mut rng).unwrap();
        let ys: Vec<_> = (0..20)
            .map(|_| ReceivedSignal((0..4).map(|_| rng.normal()).collect()))
            .collect();
        let batch = net.detect_batch(&ys).unwrap();
        for (y, s) in ys.iter().zip(batch) {
            assert_eq!(net.detect(y).unwrap(), s);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut rng = Rng::new(2);
        let net = DeepSicNet::standard(4, 4, Constellation::bpsk(), &mut rng).unwrap();
        let json = serde_json::to_string(&DeepSicCheckpoint::new(&net)).unwrap();
        assert!(json.contains("\"Q\":5"));
        let back = serde_json::from_str::<DeepSicCheckpoint>(&json).unwrap().restore().unwrap();
        let y = ReceivedSignal(vec![0.1, -0.7, 1.3, 0.2]);
        let a = net.forward(&y, Mode::Eval).unwrap();
        let b = back.forward(&y, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.checksum(), back.checksum());
    }

    #[test]
    fn empty_data_is_rejected() {
        let net = zero_net(1, 2, 2);
        let empty = LabeledBatch { signals: DenseMatrix::zeros(0, 2), labels: vec![], users: 2 };
        assert!(train_deepsic(net, &empty, &DeepSicTrainConfig::default(), &mut Rng::new(0)).is_err());
        assert!(LabeledBatch::from_pairs(&[], &Constellation::bpsk()).is_err());
    }

    #[test]
    fn training_does_not_increase_epoch_loss() {
        let model = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 10.0).unwrap();
        let mut rng = Rng::new(12);
        let pairs: Vec<_> = (0..512)
            .map(|_| {
                let s = model.constellation().random_vector(4, &mut rng);
                (model.transmit(&s, &mut rng).unwrap(), s)
            })
            .collect();
        let data = LabeledBatch::from_pairs(&pairs, model.constellation()).unwrap();
        let net = DeepSicNet::standard(4, 4, Constellation::bpsk(), &mut rng).unwrap();
        let cfg = DeepSicTrainConfig { epochs: 5, ..Default::default() };
        let (_, trace) = train_deepsic(net, &data, &cfg, &mut rng).unwrap();
        assert!(trace.epoch_losses.last() <= trace.epoch_losses.first());
    }
}
