//! Conditional GAN that learns to emulate the channel.
//!
//! The generator maps `(p, S̄, r)` (pilot observations, transmit symbols and a
//! short Gaussian noise vector) to a synthetic received signal `Ȳ`. The
//! discriminator scores `(Y, S, p)` triples, real or synthetic. Both are
//! two-hidden-layer tanh networks with batch normalization.
//!
//! The discriminator objective is
//!
//! ```text
//! f_D = (1/m) Σ_real ln D(Y | S, p) + (1/m) Σ_fake ln(1 − D(Ȳ | S̄, p))
//! ```
//!
//! which D ascends, and the generator descends
//! `f_G = (1/m) Σ_fake ln(1 − D(Ȳ | S̄, p))` with gradients taken through D.
//!
//! D always scores a mixed batch (the `m` real rows followed by the `m` fake
//! rows) so that its batch-norm statistics are shared between the two and a
//! bias common to all fakes stays visible to it.

use serde::{Deserialize, Serialize};

use crate::channels::{ChannelModel, Constellation, ReceivedSignal, SymbolVector};
use crate::error::{Error, Result};
use crate::nn::gradcheck::GradCheckReport;
use crate::nn::loss::{binary_log_derivatives, binary_log_terms};
use crate::nn::{
    Activation, AdamConfig, AdamState, DenseMatrix, Direction, ForwardCache, Gradients,
    LayerShape, Mode, NetworkCheckpoint, NetworkParams, Rng,
};

/// Number of pilot vectors summarizing the channel state.
pub const PILOT_LEN: usize = 10;
/// Length of the generator's noise input `r`.
pub const NOISE_DIM: usize = 4;
pub const HIDDEN_UNITS: usize = 512;

const PILOT_PATTERN_SEED: u64 = 0x5049_4c4f_5453;

/// Known pilot transmissions together with their latest observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBlock {
    pub pilot_tx: Vec<SymbolVector>,
    pub pilot_rx: Vec<ReceivedSignal>,
}

impl PilotBlock {
    /// The fixed transmit pattern shared by both ends of the link.
    pub fn pattern(users: usize, constellation: &Constellation) -> Vec<SymbolVector> {
        let mut rng = Rng::new(PILOT_PATTERN_SEED);
        (0..PILOT_LEN)
            .map(|_| constellation.random_vector(users, &mut rng))
            .collect()
    }

    /// Sends the pilot pattern through `channel`.
    pub fn measure(channel: &ChannelModel, rng: &mut Rng) -> Result<Self> {
        let pilot_tx = Self::pattern(channel.users(), channel.constellation());
        let pilot_rx = pilot_tx
            .iter()
            .map(|s| channel.transmit(s, rng))
            .collect::<Result<_>>()?;
        Ok(Self { pilot_tx, pilot_rx })
    }

    /// Row-major flattening of the received pilots, `p`.
    pub fn flattened(&self) -> Vec<f64> {
        self.pilot_rx.iter().flat_map(|y| y.0.iter().copied()).collect()
    }
}

/// Layer sizes shared by G and D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanShape {
    pub users: usize,
    pub antennas: usize,
    pub hidden: usize,
    pub noise_dim: usize,
    pub pilot_len: usize,
}

impl GanShape {
    pub fn new(users: usize, antennas: usize) -> Self {
        Self {
            users,
            antennas,
            hidden: HIDDEN_UNITS,
            noise_dim: NOISE_DIM,
            pilot_len: PILOT_LEN,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn pilot_width(&self) -> usize {
        self.pilot_len * self.antennas
    }

    fn hidden_layers(&self) -> [LayerShape; 2] {
        let h = LayerShape::new(self.hidden, Activation::Tanh).with_batchnorm();
        [h, h]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub params: NetworkParams,
    pub shape: GanShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorNet {
    pub params: NetworkParams,
    pub shape: GanShape,
}

/// Labeled channel observations: row `n` of `signals` was received when row
/// `n` of `symbols` was sent.
#[derive(Debug, Clone, PartialEq)]
pub struct RealBatch {
    pub symbols: DenseMatrix,
    pub signals: DenseMatrix,
}

impl RealBatch {
    pub fn len(&self) -> usize {
        self.symbols.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draws `m` uniform symbol vectors and sends them through `channel`.
    pub fn sample(channel: &ChannelModel, m: usize, rng: &mut Rng) -> Result<Self> {
        let (k, r) = (channel.users(), channel.antennas());
        let mut symbols = DenseMatrix::zeros(m, k);
        let mut signals = DenseMatrix::zeros(m, r);
        for n in 0..m {
            let s = channel.constellation().random_vector(k, rng);
            let y = channel.transmit(&s, rng)?;
            symbols.row_mut(n).copy_from_slice(&s.0);
            signals.row_mut(n).copy_from_slice(&y.0);
        }
        Ok(Self { symbols, signals })
    }
}

/// Generator output for a batch, with the forward cache needed to
/// backpropagate into G.
#[derive(Debug, Clone)]
pub struct FakeBatch {
    pub symbols: DenseMatrix,
    pub noise: DenseMatrix,
    pub signals: DenseMatrix,
    pub cache: ForwardCache,
}

impl FakeBatch {
    pub fn len(&self) -> usize {
        self.symbols.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn conditioning_rows(rows: usize, segments: &[(&DenseMatrix, bool)], width: usize) -> DenseMatrix {
    // Each segment is either per-row (`true`) or a single row repeated.
    let mut out = DenseMatrix::zeros(rows, width);
    for n in 0..rows {
        let row = out.row_mut(n);
        let mut at = 0;
        for (m, per_row) in segments {
            let src = if *per_row { m.row(n) } else { m.row(0) };
            row[at..at + src.len()].copy_from_slice(src);
            at += src.len();
        }
    }
    out
}

impl GeneratorNet {
    pub fn new(shape: GanShape, rng: &mut Rng) -> Self {
        let [h1, h2] = shape.hidden_layers();
        let params = NetworkParams::glorot(
            Self::input_width(&shape),
            &[h1, h2, LayerShape::new(shape.antennas, Activation::Identity)],
            rng,
        );
        Self { params, shape }
    }

    /// `p ++ S̄ ++ r`.
    pub fn input_width(shape: &GanShape) -> usize {
        shape.pilot_width() + shape.users + shape.noise_dim
    }

    fn check_pilot(&self, pilot: &[f64]) -> Result<()> {
        if pilot.len() != self.shape.pilot_width() {
            return Err(Error::dim(format!(
                "pilot of length {} but generator expects {}",
                pilot.len(),
                self.shape.pilot_width()
            )));
        }
        Ok(())
    }

    /// Runs G on explicit symbols and noise.
    pub fn forward_with_noise(
        &self,
        pilot: &[f64],
        symbols: &DenseMatrix,
        noise: &DenseMatrix,
        mode: Mode,
    ) -> Result<(DenseMatrix, ForwardCache)> {
        self.check_pilot(pilot)?;
        if symbols.cols() != self.shape.users || noise.cols() != self.shape.noise_dim {
            return Err(Error::dim("generator symbol or noise width"));
        }
        let p = DenseMatrix::row_vector(pilot);
        let input = conditioning_rows(
            symbols.rows(),
            &[(&p, false), (symbols, true), (noise, true)],
            Self::input_width(&self.shape),
        );
        self.params.forward(&input, mode)
    }

    /// Draws `r ~ N(0, I)` for each row of `symbols` and generates.
    pub fn generate_batch(
        &self,
        pilot: &[f64],
        symbols: DenseMatrix,
        rng: &mut Rng,
        mode: Mode,
    ) -> Result<FakeBatch> {
        let noise = DenseMatrix::from_fn(symbols.rows(), self.shape.noise_dim, |_, _| rng.normal());
        let (signals, cache) = self.forward_with_noise(pilot, &symbols, &noise, mode)?;
        Ok(FakeBatch {
            symbols,
            noise,
            signals,
            cache,
        })
    }

    /// Single synthetic signal for `s_bar`.
    pub fn generate(
        &self,
        pilot: &[f64],
        s_bar: &SymbolVector,
        rng: &mut Rng,
        mode: Mode,
    ) -> Result<ReceivedSignal> {
        let batch = self.generate_batch(pilot, DenseMatrix::row_vector(&s_bar.0), rng, mode)?;
        Ok(ReceivedSignal(batch.signals.into_data()))
    }
}

impl DiscriminatorNet {
    pub fn new(shape: GanShape, rng: &mut Rng) -> Self {
        let [h1, h2] = shape.hidden_layers();
        let params = NetworkParams::glorot(
            Self::input_width(&shape),
            &[h1, h2, LayerShape::new(1, Activation::Sigmoid)],
            rng,
        );
        Self { params, shape }
    }

    /// `Y ++ S ++ p`.
    pub fn input_width(shape: &GanShape) -> usize {
        shape.antennas + shape.users + shape.pilot_width()
    }

    fn input_rows(&self, signals: &DenseMatrix, symbols: &DenseMatrix, pilot: &[f64]) -> DenseMatrix {
        let p = DenseMatrix::row_vector(pilot);
        conditioning_rows(
            signals.rows(),
            &[(signals, true), (symbols, true), (&p, false)],
            Self::input_width(&self.shape),
        )
    }

    /// Scores `[real; fake]` as one batch. Returns the `2m` outputs and the
    /// cache; the first `m` rows are the real samples.
    pub fn score_mixed(
        &self,
        real: &RealBatch,
        fake_signals: &DenseMatrix,
        fake_symbols: &DenseMatrix,
        pilot: &[f64],
        mode: Mode,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        if pilot.len() != self.shape.pilot_width() {
            return Err(Error::dim("pilot width for discriminator"));
        }
        let real_in = self.input_rows(&real.signals, &real.symbols, pilot);
        let fake_in = self.input_rows(fake_signals, fake_symbols, pilot);
        let input = DenseMatrix::vstack(&[&real_in, &fake_in])?;
        let (out, cache) = self.params.forward(&input, mode)?;
        Ok((out.into_data(), cache))
    }
}

/// Which generator objective to descend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorObjective {
    /// `ln(1 − D(Ȳ))`, exactly as in the minimax game.
    #[default]
    Minimax,
    /// Descend `−ln D(Ȳ)` instead. An extension, off by default.
    NonSaturating,
}

/// Result of evaluating the discriminator objective.
#[derive(Debug, Clone)]
pub struct DiscriminatorEval {
    pub f_d: f64,
    /// Gradient of `f_D` with respect to D's parameters (ascent direction).
    pub grads: Gradients,
    pub real_scores: Vec<f64>,
    pub fake_scores: Vec<f64>,
    pub cache: ForwardCache,
}

impl DiscriminatorEval {
    /// Fraction of samples D labels correctly at threshold 0.5.
    pub fn accuracy(&self) -> f64 {
        let hits = self.real_scores.iter().filter(|&&d| d > 0.5).count()
            + self.fake_scores.iter().filter(|&&d| d < 0.5).count();
        hits as f64 / (self.real_scores.len() + self.fake_scores.len()) as f64
    }
}

/// `f_D` from raw scores.
pub fn discriminator_objective(real_scores: &[f64], fake_scores: &[f64]) -> f64 {
    let m_real = real_scores.len() as f64;
    let m_fake = fake_scores.len() as f64;
    real_scores.iter().map(|&d| binary_log_terms(d).0).sum::<f64>() / m_real
        + fake_scores.iter().map(|&d| binary_log_terms(d).1).sum::<f64>() / m_fake
}

/// `f_G` from raw fake scores.
pub fn generator_objective(fake_scores: &[f64], objective: GeneratorObjective) -> f64 {
    let m = fake_scores.len() as f64;
    match objective {
        GeneratorObjective::Minimax => {
            fake_scores.iter().map(|&d| binary_log_terms(d).1).sum::<f64>() / m
        }
        GeneratorObjective::NonSaturating => {
            -fake_scores.iter().map(|&d| binary_log_terms(d).0).sum::<f64>() / m
        }
    }
}

/// Evaluates `f_D` and its gradient with respect to D only.
pub fn discriminator_loss(
    d: &DiscriminatorNet,
    real: &RealBatch,
    fake_signals: &DenseMatrix,
    fake_symbols: &DenseMatrix,
    pilot: &[f64],
) -> Result<DiscriminatorEval> {
    let m = real.len();
    if m == 0 || fake_signals.rows() == 0 {
        return Err(Error::Empty("discriminator batch"));
    }
    if fake_signals.rows() != m || fake_symbols.rows() != m {
        return Err(Error::dim("real and fake batches must have equal size"));
    }
    let (scores, cache) = d.score_mixed(real, fake_signals, fake_symbols, pilot, Mode::Train)?;
    let (real_scores, fake_scores) = scores.split_at(m);
    let f_d = discriminator_objective(real_scores, fake_scores);
    let mf = m as f64;
    let mut out_grad = DenseMatrix::zeros(2 * m, 1);
    for (n, &s) in scores.iter().enumerate() {
        let (d_log, d_log1m) = binary_log_derivatives(s);
        out_grad.data_mut()[n] = if n < m { d_log / mf } else { d_log1m / mf };
    }
    let (grads, _) = d.params.backward(&cache, &out_grad)?;
    Ok(DiscriminatorEval {
        f_d,
        grads,
        real_scores: real_scores.to_vec(),
        fake_scores: fake_scores.to_vec(),
        cache,
    })
}

/// Evaluates the generator objective and its gradient with respect to G,
/// backpropagated through D. D is scored in train mode on `[real; fake]`
/// but its state is left untouched.
///
/// Also returns dObjective/dȲ so callers can add further terms.
pub fn generator_loss(
    g: &GeneratorNet,
    d: &DiscriminatorNet,
    real: &RealBatch,
    fake: &FakeBatch,
    pilot: &[f64],
    objective: GeneratorObjective,
) -> Result<(f64, Gradients)> {
    let (f_g, signal_grad) = generator_signal_gradient(d, real, fake, pilot, objective)?;
    let (grads, _) = g.params.backward(&fake.cache, &signal_grad)?;
    Ok((f_g, grads))
}

/// `f_G` and its gradient with respect to the fake signals `Ȳ`.
pub fn generator_signal_gradient(
    d: &DiscriminatorNet,
    real: &RealBatch,
    fake: &FakeBatch,
    pilot: &[f64],
    objective: GeneratorObjective,
) -> Result<(f64, DenseMatrix)> {
    let m = fake.len();
    if m == 0 {
        return Err(Error::Empty("generator batch"));
    }
    if real.len() != m {
        return Err(Error::dim("real and fake batches must have equal size"));
    }
    let (scores, cache) = d.score_mixed(real, &fake.signals, &fake.symbols, pilot, Mode::Train)?;
    let fake_scores = &scores[m..];
    let f_g = generator_objective(fake_scores, objective);
    let mf = m as f64;
    let mut out_grad = DenseMatrix::zeros(2 * m, 1);
    for (n, &s) in fake_scores.iter().enumerate() {
        let (d_log, d_log1m) = binary_log_derivatives(s);
        out_grad.data_mut()[m + n] = match objective {
            GeneratorObjective::Minimax => d_log1m / mf,
            GeneratorObjective::NonSaturating => -d_log / mf,
        };
    }
    let (_, input_grad) = d.params.backward(&cache, &out_grad)?;
    let r = d.shape.antennas;
    let mut signal_grad = DenseMatrix::zeros(m, r);
    for n in 0..m {
        signal_grad
            .row_mut(n)
            .copy_from_slice(&input_grad.row(m + n)[..r]);
    }
    Ok((f_g, signal_grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    /// Batch size `m`.
    pub batch: usize,
    pub adam_g: AdamConfig,
    pub adam_d: AdamConfig,
    pub objective: GeneratorObjective,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            batch: 64,
            adam_g: AdamConfig::default(),
            adam_d: AdamConfig::default(),
            objective: GeneratorObjective::Minimax,
        }
    }
}

/// Losses observed during one adversarial step (before that step's updates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanStepTrace {
    pub f_d: f64,
    pub f_g: f64,
    pub d_accuracy: f64,
}

/// Generator, discriminator and their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct GanTrainer {
    pub g: GeneratorNet,
    pub d: DiscriminatorNet,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    pub config: GanConfig,
    /// Generator forward passes over a batch, for efficiency accounting.
    pub generation_passes: u64,
}

impl GanTrainer {
    pub fn new(shape: GanShape, config: GanConfig, rng: &mut Rng) -> Self {
        let g = GeneratorNet::new(shape, rng);
        let d = DiscriminatorNet::new(shape, rng);
        let adam_g = AdamState::new(&g.params, config.adam_g);
        let adam_d = AdamState::new(&d.params, config.adam_d);
        Self {
            g,
            d,
            adam_g,
            adam_d,
            config,
            generation_passes: 0,
        }
    }

    pub fn random_symbols(&self, constellation: &Constellation, rows: usize, rng: &mut Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, self.g.shape.users, |_, _| {
            constellation.symbol(rng.index(constellation.len()))
        })
    }

    /// Train-mode fake batch; G's running statistics are not touched.
    pub fn fake_batch(&mut self, pilot: &[f64], constellation: &Constellation, rng: &mut Rng) -> Result<FakeBatch> {
        let symbols = self.random_symbols(constellation, self.config.batch, rng);
        self.generation_passes += 1;
        self.g.generate_batch(pilot, symbols, rng, Mode::Train)
    }

    /// Generates fakes, then ascends D on `f_D`. G is left unchanged.
    pub fn discriminator_step(
        &mut self,
        real: &RealBatch,
        pilot: &[f64],
        constellation: &Constellation,
        rng: &mut Rng,
    ) -> Result<DiscriminatorEval> {
        let fake = self.fake_batch(pilot, constellation, rng)?;
        let eval = discriminator_loss(&self.d, real, &fake.signals, &fake.symbols, pilot)?;
        self.d.params.absorb_batch_stats(&eval.cache)?;
        self.adam_d
            .step(&mut self.d.params, &eval.grads, Direction::Ascend)?;
        Ok(eval)
    }

    /// Descends G on its objective over `fake`, which must come from the
    /// current G. D is left unchanged.
    pub fn generator_step_on(
        &mut self,
        real: &RealBatch,
        fake: &FakeBatch,
        pilot: &[f64],
        extra_signal_grad: Option<&DenseMatrix>,
    ) -> Result<f64> {
        let (f_g, mut signal_grad) =
            generator_signal_gradient(&self.d, real, fake, pilot, self.config.objective)?;
        if let Some(extra) = extra_signal_grad {
            for (a, b) in signal_grad.data_mut().iter_mut().zip(extra.data()) {
                *a += b;
            }
        }
        let (grads, _) = self.g.params.backward(&fake.cache, &signal_grad)?;
        self.g.params.absorb_batch_stats(&fake.cache)?;
        self.adam_g
            .step(&mut self.g.params, &grads, Direction::Descend)?;
        Ok(f_g)
    }

    /// One adversarial round on a gathered real batch: fakes, D ascent,
    /// fresh fakes, G descent.
    pub fn train_step(
        &mut self,
        real: &RealBatch,
        pilot: &[f64],
        constellation: &Constellation,
        rng: &mut Rng,
    ) -> Result<GanStepTrace> {
        let eval = self.discriminator_step(real, pilot, constellation, rng)?;
        let fake = self.fake_batch(pilot, constellation, rng)?;
        let f_g = self.generator_step_on(real, &fake, pilot, None)?;
        Ok(GanStepTrace {
            f_d: eval.f_d,
            f_g,
            d_accuracy: eval.accuracy(),
        })
    }
}

/// Gathers `m` real pairs from `channel` and runs one adversarial round.
pub fn gan_train_step(
    trainer: &mut GanTrainer,
    channel: &ChannelModel,
    pilot: &PilotBlock,
    rng: &mut Rng,
) -> Result<GanStepTrace> {
    let real = RealBatch::sample(channel, trainer.config.batch, rng)?;
    trainer.train_step(&real, &pilot.flattened(), channel.constellation(), rng)
}

/// Role-tagged checkpoint for G or D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanCheckpoint {
    pub role: GanRole,
    pub noise_dim: usize,
    pub pilot_len: usize,
    pub users: usize,
    pub antennas: usize,
    #[serde(flatten)]
    pub network: NetworkCheckpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanRole {
    Generator,
    Discriminator,
}

impl GanCheckpoint {
    pub fn generator(g: &GeneratorNet, adam: Option<&AdamState>) -> Self {
        Self::tagged(GanRole::Generator, &g.shape, NetworkCheckpoint::new(&g.params, adam))
    }

    pub fn discriminator(d: &DiscriminatorNet, adam: Option<&AdamState>) -> Self {
        Self::tagged(GanRole::Discriminator, &d.shape, NetworkCheckpoint::new(&d.params, adam))
    }

    fn tagged(role: GanRole, shape: &GanShape, network: NetworkCheckpoint) -> Self {
        Self {
            role,
            noise_dim: shape.noise_dim,
            pilot_len: shape.pilot_len,
            users: shape.users,
            antennas: shape.antennas,
            network,
        }
    }

    fn shape(&self) -> Result<GanShape> {
        let hidden = *self
            .network
            .layer_dims
            .get(1)
            .ok_or_else(|| Error::dim("checkpoint has no hidden layer"))?;
        Ok(GanShape {
            users: self.users,
            antennas: self.antennas,
            hidden,
            noise_dim: self.noise_dim,
            pilot_len: self.pilot_len,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn into_generator(self) -> Result<(GeneratorNet, Option<AdamState>)> {
        if self.role != GanRole::Generator {
            return Err(Error::InvalidValue("checkpoint is not a generator".into()));
        }
        let shape = self.shape()?;
        let (params, adam) = self.network.restore()?;
        if params.input_dim() != GeneratorNet::input_width(&shape) || params.output_dim() != shape.antennas {
            return Err(Error::dim("generator checkpoint dimensions"));
        }
        Ok((GeneratorNet { params, shape }, adam))
    }

    pub fn into_discriminator(self) -> Result<(DiscriminatorNet, Option<AdamState>)> {
        if self.role != GanRole::Discriminator {
            return Err(Error::InvalidValue("checkpoint is not a discriminator".into()));
        }
        let shape = self.shape()?;
        let (params, adam) = self.network.restore()?;
        if params.input_dim() != DiscriminatorNet::input_width(&shape) || params.output_dim() != 1 {
            return Err(Error::dim("discriminator checkpoint dimensions"));
        }
        Ok((DiscriminatorNet { params, shape }, adam))
    }
}

/// Finite-difference checks of `f_D` with respect to D and `f_G` with
/// respect to G on a small instance.
pub fn gradient_checks(seed: u64) -> Result<Vec<GradCheckReport>> {
    use crate::nn::gradcheck::check_network;

    let mut rng = Rng::new(seed);
    let shape = GanShape {
        users: 2,
        antennas: 2,
        hidden: 4,
        noise_dim: 2,
        pilot_len: 2,
    };
    let channel = ChannelModel::standard(crate::channels::ChannelKind::LinearGaussian, 2, 2, 6.0)?;
    let mut g = GeneratorNet::new(shape, &mut rng);
    let mut d = DiscriminatorNet::new(shape, &mut rng);
    let pilot_block = PilotBlock {
        pilot_tx: PilotBlock::pattern(2, channel.constellation())[..2].to_vec(),
        pilot_rx: (0..2)
            .map(|_| ReceivedSignal(vec![rng.normal(), rng.normal()]))
            .collect(),
    };
    let pilot = pilot_block.flattened();
    let m = 5;
    let real = RealBatch::sample(&channel, m, &mut rng)?;
    let symbols = DenseMatrix::from_fn(m, 2, |_, _| if rng.uniform() < 0.5 { -1.0 } else { 1.0 });
    let fake = g.generate_batch(&pilot, symbols.clone(), &mut rng, Mode::Train)?;

    let eval = discriminator_loss(&d, &real, &fake.signals, &fake.symbols, &pilot)?;
    let d_report = check_network("discriminator f_D wrt D", &mut d.params, &eval.grads, |p| {
        let dn = DiscriminatorNet { params: p.clone(), shape };
        let (scores, _) = dn
            .score_mixed(&real, &fake.signals, &fake.symbols, &pilot, Mode::Train)
            .expect("shapes fixed");
        discriminator_objective(&scores[..m], &scores[m..])
    });

    let (_, g_grads) = generator_loss(&g, &d, &real, &fake, &pilot, GeneratorObjective::Minimax)?;
    let noise = fake.noise.clone();
    let g_report = check_network("generator f_G wrt G", &mut g.params, &g_grads, |p| {
        let gn = GeneratorNet { params: p.clone(), shape };
        let (signals, _) = gn
            .forward_with_noise(&pilot, &symbols, &noise, Mode::Train)
            .expect("shapes fixed");
        let (scores, _) = d
            .score_mixed(&real, &signals, &symbols, &pilot, Mode::Train)
            .expect("shapes fixed");
        generator_objective(&scores[m..], GeneratorObjective::Minimax)
    });
    Ok(vec![d_report, g_report])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ChannelKind;
    use std::f64::consts::LN_2;

    fn constant_discriminator(shape: GanShape, value: f64) -> DiscriminatorNet {
        let mut rng = Rng::new(0);
        let mut d = DiscriminatorNet::new(shape, &mut rng);
        let last = d.params.layers_mut().last_mut().unwrap();
        last.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        last.bias[0] = (value / (1.0 - value)).ln();
        d
    }

    fn small_shape() -> GanShape {
        GanShape::new(4, 4).with_hidden(16)
    }

    #[test]
    fn pilot_flattening_is_row_major() {
        let ch = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 8.0).unwrap();
        let pb = PilotBlock::measure(&ch, &mut Rng::new(1)).unwrap();
        let p = pb.flattened();
        assert_eq!(p.len(), PILOT_LEN * 4);
        assert_eq!(&p[4..8], &pb.pilot_rx[1].0[..]);
        assert_eq!(PilotBlock::pattern(4, ch.constellation()), pb.pilot_tx);
    }

    #[test]
    fn zero_weight_generator_outputs_zero() {
        let shape = small_shape();
        let mut g = GeneratorNet::new(shape, &mut Rng::new(3));
        for l in g.params.layers_mut() {
            l.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        let y = g
            .generate(&vec![0.3; 40], &SymbolVector(vec![1.0; 4]), &mut Rng::new(4), Mode::Eval)
            .unwrap();
        assert_eq!(y.0, vec![0.0; 4]);
    }

    #[test]
    fn eval_generation_is_deterministic_given_noise() {
        let shape = small_shape();
        let g = GeneratorNet::new(shape, &mut Rng::new(3));
        let s = DenseMatrix::row_vector(&[1.0, -1.0, 1.0, 1.0]);
        let r = DenseMatrix::row_vector(&[0.1, -0.2, 0.3, 0.4]);
        let p = vec![0.5; 40];
        let a = g.forward_with_noise(&p, &s, &r, Mode::Eval).unwrap().0;
        let b = g.forward_with_noise(&p, &s, &r, Mode::Eval).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn loss_constants_at_uninformed_discriminator() {
        let shape = small_shape();
        let d = constant_discriminator(shape, 0.5);
        let mut rng = Rng::new(8);
        let ch = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 8.0).unwrap();
        let real = RealBatch::sample(&ch, 16, &mut rng).unwrap();
        let g = GeneratorNet::new(shape, &mut rng);
        let p = vec![0.0; 40];
        let fake = g
            .generate_batch(&p, real.symbols.clone(), &mut rng, Mode::Train)
            .unwrap();
        let eval = discriminator_loss(&d, &real, &fake.signals, &fake.symbols, &p).unwrap();
        assert!((eval.f_d + 2.0 * LN_2).abs() < 1e-12);
        let (f_g, _) = generator_loss(&g, &d, &real, &fake, &p, GeneratorObjective::Minimax).unwrap();
        assert!((f_g + LN_2).abs() < 1e-12);
    }

    #[test]
    fn objective_direct_values() {
        let f_d = discriminator_objective(&[0.9; 8], &[0.1; 8]);
        assert!((f_d - 2.0 * 0.9f64.ln()).abs() < 1e-12);
        assert!((f_d + 0.2107).abs() < 1e-4);
        let f_g = generator_objective(&[0.99; 8], GeneratorObjective::Minimax);
        assert!((f_g + 4.6052).abs() < 1e-4);
        assert!((f_g - 0.01f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn discriminator_objective_is_finite_and_nonpositive() {
        for &(a, b) in &[(1.0, 0.0), (0.0, 1.0), (0.5, 0.5), (1.0 - 1e-15, 1e-300)] {
            let f = discriminator_objective(&[a], &[b]);
            assert!(f.is_finite() && f <= 0.0);
        }
    }

    #[test]
    fn empty_and_mismatched_batches_error() {
        let shape = small_shape();
        let d = DiscriminatorNet::new(shape, &mut Rng::new(1));
        let empty = RealBatch {
            symbols: DenseMatrix::zeros(0, 4),
            signals: DenseMatrix::zeros(0, 4),
        };
        let z = DenseMatrix::zeros(0, 4);
        assert!(matches!(
            discriminator_loss(&d, &empty, &z, &z, &[0.0; 40]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn small_gan_gradients_match_finite_differences() {
        for report in gradient_checks(17).unwrap() {
            assert!(report.passed(1e-4), "{report:?}");
        }
    }

    #[test]
    fn steps_are_isolated_between_networks() {
        let shape = small_shape();
        let mut rng = Rng::new(5);
        let mut t = GanTrainer::new(shape, GanConfig { batch: 8, ..Default::default() }, &mut rng);
        let ch = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 8.0).unwrap();
        let pilot = PilotBlock::measure(&ch, &mut rng).unwrap().flattened();
        let real = RealBatch::sample(&ch, 8, &mut rng).unwrap();

        let g_before = t.g.params.checksum();
        let d_before = t.d.params.checksum();
        t.discriminator_step(&real, &pilot, ch.constellation(), &mut rng).unwrap();
        assert_eq!(t.g.params.checksum(), g_before);
        assert_ne!(t.d.params.checksum(), d_before);

        let d_mid = t.d.params.checksum();
        let fake = t.fake_batch(&pilot, ch.constellation(), &mut rng).unwrap();
        t.generator_step_on(&real, &fake, &pilot, None).unwrap();
        assert_eq!(t.d.params.checksum(), d_mid);
        assert_ne!(t.g.params.checksum(), g_before);
    }

    #[test]
    fn ascent_step_does_not_decrease_objective_on_frozen_batch() {
        let shape = small_shape();
        let mut rng = Rng::new(21);
        let mut t = GanTrainer::new(shape, GanConfig { batch: 16, ..Default::default() }, &mut rng);
        let ch = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 8.0).unwrap();
        let pilot = PilotBlock::measure(&ch, &mut rng).unwrap().flattened();
        let real = RealBatch::sample(&ch, 16, &mut rng).unwrap();
        let fake = t.fake_batch(&pilot, ch.constellation(), &mut rng).unwrap();
        let before = discriminator_loss(&t.d, &real, &fake.signals, &fake.symbols, &pilot).unwrap();
        t.adam_d.step(&mut t.d.params, &before.grads, Direction::Ascend).unwrap();
        let after = discriminator_loss(&t.d, &real, &fake.signals, &fake.symbols, &pilot).unwrap();
        assert!(after.f_d >= before.f_d - 1e-12, "{} -> {}", before.f_d, after.f_d);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let shape = small_shape();
        let mut rng = Rng::new(2);
        let cfg = GanConfig {
            batch: 8,
            adam_g: AdamConfig::default().with_alpha(0.0),
            adam_d: AdamConfig::default().with_alpha(0.0),
            ..Default::default()
        };
        let mut t = GanTrainer::new(shape, cfg, &mut rng);
        let ch = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 8.0).unwrap();
        let pilot = PilotBlock::measure(&ch, &mut rng).unwrap();
        let p = pilot.flattened();
        // Pre-step evaluation with the same random draws the step will make.
        let mut probe_rng = rng.clone();
        let real = RealBatch::sample(&ch, 8, &mut probe_rng).unwrap();
        let mut probe = t.clone();
        let fake = probe.fake_batch(&p, ch.constellation(), &mut probe_rng).unwrap();
        let expect_fd = discriminator_loss(&t.d, &real, &fake.signals, &fake.symbols, &p).unwrap().f_d;

        let g0 = t.g.params.layers()[0].weight.clone();
        let d0 = t.d.params.layers()[0].weight.clone();
        let trace = gan_train_step(&mut t, &ch, &pilot, &mut rng).unwrap();
        assert_eq!(t.g.params.layers()[0].weight, g0);
        assert_eq!(t.d.params.layers()[0].weight, d0);
        assert_eq!(trace.f_d.to_bits(), expect_fd.to_bits());
    }

    #[test]
    fn seeded_steps_are_reproducible() {
        let run = || {
            let mut rng = Rng::new(99);
            let mut t = GanTrainer::new(small_shape(), GanConfig { batch: 8, ..Default::default() }, &mut rng);
            let ch = ChannelModel::standard(ChannelKind::QuantizedGaussian, 4, 4, 4.0).unwrap();
            let pilot = PilotBlock::measure(&ch, &mut rng).unwrap();
            for _ in 0..2 {
                gan_train_step(&mut t, &ch, &pilot, &mut rng).unwrap();
            }
            (t.g.params.checksum(), t.d.params.checksum())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_roles_round_trip() {
        let shape = small_shape();
        let mut rng = Rng::new(4);
        let t = GanTrainer::new(shape, GanConfig::default(), &mut rng);
        let json = serde_json::to_string(&GanCheckpoint::generator(&t.g, Some(&t.adam_g))).unwrap();
        assert!(json.contains("\"role\":\"generator\""));
        let back: GanCheckpoint = serde_json::from_str(&json).unwrap();
        let (g, adam) = back.clone().into_generator().unwrap();
        assert_eq!(g, t.g);
        assert_eq!(adam.unwrap(), t.adam_g);
        assert!(back.into_discriminator().is_err());
        let dj = serde_json::to_string(&GanCheckpoint::discriminator(&t.d, None)).unwrap();
        let (d, _) = serde_json::from_str::<GanCheckpoint>(&dj).unwrap().into_discriminator().unwrap();
        assert_eq!(d, t.d);
    }
}
