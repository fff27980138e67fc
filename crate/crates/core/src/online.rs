//! Online training: TrainGAN and UpdateDetector running side by side, and
//! the fused joint step.
//!
//! The detector only ever reads published generator snapshots. A snapshot
//! is an immutable copy of G taken after a TrainGAN step, so a reader can
//! never observe a half-updated generator.

use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channels::{ChannelModel, Constellation};
use crate::deepsic::{DeepSicNet, DeepSicTrainer, LabeledBatch, LossLayers};
use crate::detect::{ser_estimate, SerBudget};
use crate::error::{Error, Result};
use crate::gan::{GanConfig, GanShape, GanTrainer, GeneratorNet, PilotBlock, RealBatch};
use crate::nn::{AdamConfig, Mode, Rng};

/// Source of labeled real observations and pilot measurements.
pub trait ChannelStream {
    /// Next `m` labeled observations, or `None` once the stream is exhausted.
    fn gather(&mut self, m: usize) -> Result<Option<RealBatch>>;
    fn pilot(&self) -> &PilotBlock;
    fn constellation(&self) -> &Constellation;
}

/// A fixed channel observed through a seeded rng, with an optional cap on
/// the number of observations.
#[derive(Debug, Clone)]
pub struct StaticStream {
    pub model: ChannelModel,
    pilot: PilotBlock,
    rng: Rng,
    remaining: Option<usize>,
}

impl StaticStream {
    pub fn new(model: ChannelModel, mut rng: Rng, limit: Option<usize>) -> Result<Self> {
        let pilot = PilotBlock::measure(&model, &mut rng)?;
        Ok(Self {
            model,
            pilot,
            rng,
            remaining: limit,
        })
    }
}

impl ChannelStream for StaticStream {
    fn gather(&mut self, m: usize) -> Result<Option<RealBatch>> {
        if let Some(left) = self.remaining.as_mut() {
            if *left < m {
                return Ok(None);
            }
            *left -= m;
        }
        RealBatch::sample(&self.model, m, &mut self.rng).map(Some)
    }

    fn pilot(&self) -> &PilotBlock {
        &self.pilot
    }

    fn constellation(&self) -> &Constellation {
        self.model.constellation()
    }
}

/// An immutable, versioned copy of the generator.
#[derive(Debug, Clone)]
pub struct GeneratorSnapshot {
    pub version: u64,
    pub checksum: u64,
    pub generator: Arc<GeneratorNet>,
    pub pilot: Arc<Vec<f64>>,
}

/// Single-writer, multi-reader slot holding the latest snapshot.
#[derive(Debug)]
pub struct SnapshotCell {
    latest: Mutex<Arc<GeneratorSnapshot>>,
}

impl SnapshotCell {
    pub fn new(initial: GeneratorSnapshot) -> Self {
        Self {
            latest: Mutex::new(Arc::new(initial)),
        }
    }

    pub fn publish(&self, snapshot: GeneratorSnapshot) {
        let mut slot = self.latest.lock().expect("snapshot lock poisoned");
        debug_assert!(snapshot.version >= slot.version);
        *slot = Arc::new(snapshot);
    }

    pub fn latest(&self) -> Arc<GeneratorSnapshot> {
        Arc::clone(&self.latest.lock().expect("snapshot lock poisoned"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// TrainGAN, UpdateDetector, TrainGAN, ... on one thread.
    #[default]
    Alternating,
    /// The two procedures on separate threads.
    Threaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointStepConfig {
    pub lambda_det: f64,
    pub detector_grad_into_g: bool,
}

impl Default for JointStepConfig {
    fn default() -> Self {
        Self {
            lambda_det: 1.0,
            detector_grad_into_g: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub gan: GanConfig,
    /// Synthetic samples per detector update, `n`.
    pub detector_batch: usize,
    pub detector_adam: AdamConfig,
    pub loss_layers: LossLayers,
    pub train_gan_steps: usize,
    pub update_detector_steps: usize,
    pub schedule: Schedule,
    /// Probe the detector every this many TrainGAN steps (0 disables).
    pub probe_every: usize,
    pub probe_symbols: usize,
    pub record_wallclock: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            gan: GanConfig::default(),
            detector_batch: 64,
            detector_adam: AdamConfig::default(),
            loss_layers: LossLayers::All,
            train_gan_steps: 2000,
            update_detector_steps: 2000,
            schedule: Schedule::Alternating,
            probe_every: 0,
            probe_symbols: 10_000,
            record_wallclock: false,
        }
    }
}

/// Everything the online procedures share.
#[derive(Debug, Clone)]
pub struct OnlineState {
    pub gan: GanTrainer,
    pub detector: DeepSicTrainer,
    pub snapshot: Arc<GeneratorSnapshot>,
    pub gan_steps: u64,
    pub detector_steps: u64,
    /// Generator batch passes used to make detector training data.
    pub detector_generation_passes: u64,
}

impl OnlineState {
    pub fn new(shape: GanShape, constellation: Constellation, cfg: &OnlineConfig, rng: &mut Rng) -> Result<Self> {
        let gan = GanTrainer::new(shape, cfg.gan, rng);
        let net = DeepSicNet::standard(shape.users, shape.antennas, constellation, rng)?;
        let detector = DeepSicTrainer::new(net, cfg.detector_adam, cfg.loss_layers);
        let snapshot = Arc::new(GeneratorSnapshot {
            version: 0,
            checksum: gan.g.params.checksum(),
            generator: Arc::new(gan.g.clone()),
            pilot: Arc::new(vec![0.0; shape.pilot_width()]),
        });
        Ok(Self {
            gan,
            detector,
            snapshot,
            gan_steps: 0,
            detector_steps: 0,
            detector_generation_passes: 0,
        })
    }

    /// Copies the current generator into a new snapshot.
    pub fn publish(&mut self, pilot: &[f64]) {
        self.snapshot = Arc::new(take_snapshot(&self.gan.g, self.snapshot.version + 1, pilot));
    }

    /// All generator batch passes, GAN and detector side.
    pub fn generation_passes(&self) -> u64 {
        self.gan.generation_passes + self.detector_generation_passes
    }
}

fn take_snapshot(g: &GeneratorNet, version: u64, pilot: &[f64]) -> GeneratorSnapshot {
    GeneratorSnapshot {
        version,
        checksum: g.params.checksum(),
        generator: Arc::new(g.clone()),
        pilot: Arc::new(pilot.to_vec()),
    }
}

/// One UpdateDetector step: `n` random symbol vectors, synthetic signals
/// from the snapshot in eval mode, one Adam step on the detector.
pub fn update_detector_step(
    detector: &mut DeepSicTrainer,
    snapshot: &GeneratorSnapshot,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let constellation = detector.net.constellation().clone();
    let k = detector.net.users();
    let symbols = crate::nn::DenseMatrix::from_fn(n, k, |_, _| constellation.symbol(rng.index(constellation.len())));
    let fake = snapshot
        .generator
        .generate_batch(&snapshot.pilot, symbols, rng, Mode::Eval)?;
    let batch = LabeledBatch::from_matrices(fake.signals, &fake.symbols, &constellation)?;
    detector.step(&batch)
}

/// One row of an online trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub procedure: String,
    #[serde(rename = "f_D")]
    pub f_d: Option<f64>,
    #[serde(rename = "f_G")]
    pub f_g: Option<f64>,
    #[serde(rename = "f_Q")]
    pub f_q: Option<f64>,
    pub probe_ser: Option<f64>,
    pub snapshot_version: u64,
    pub wallclock_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OnlineReport {
    pub trace: Vec<TraceRow>,
    /// True when the stream ran dry before the TrainGAN budget was spent.
    pub exhausted: bool,
    /// Snapshot versions read by each detector update, in order.
    pub versions_read: Vec<u64>,
}

struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn ms(&self) -> Option<u64> {
        self.enabled.then(|| self.start.elapsed().as_millis() as u64)
    }
}

fn probe(state: &OnlineState, model: &ChannelModel, symbols: usize, seed: u64) -> Result<f64> {
    let vectors = symbols.div_ceil(model.users()).max(1);
    let r = ser_estimate(&state.detector.net, model, SerBudget::fixed(vectors), &mut Rng::new(seed))?;
    Ok(r.ser)
}

/// Runs TrainGAN and UpdateDetector until both budgets are spent or the
/// stream is exhausted. `probe_model` is the held-out channel used for SER
/// probes, with `probe_seed` as its independent seed.
pub fn online_loop(
    state: &mut OnlineState,
    stream: &mut dyn ChannelStream,
    cfg: &OnlineConfig,
    rng: &mut Rng,
    probe_model: Option<(&ChannelModel, u64)>,
) -> Result<OnlineReport> {
    let mut gan_rng = rng.fork("train_gan");
    let mut det_rng = rng.fork("update_detector");
    let pilot = stream.pilot().flattened();
    let clock = Clock {
        start: Instant::now(),
        enabled: cfg.record_wallclock,
    };
    match cfg.schedule {
        Schedule::Alternating => alternate(state, stream, cfg, &pilot, &mut gan_rng, &mut det_rng, probe_model, &clock),
        Schedule::Threaded => threaded(state, stream, cfg, &pilot, &mut gan_rng, &mut det_rng, probe_model, &clock),
    }
}

fn gan_row(state: &OnlineState, t: &crate::gan::GanStepTrace, clock: &Clock) -> TraceRow {
    TraceRow {
        step: state.gan_steps,
        procedure: "train_gan".into(),
        f_d: Some(t.f_d),
        f_g: Some(t.f_g),
        f_q: None,
        probe_ser: None,
        snapshot_version: state.snapshot.version,
        wallclock_ms: clock.ms(),
    }
}

fn probe_row(state: &OnlineState, ser: f64, clock: &Clock) -> TraceRow {
    TraceRow {
        step: state.gan_steps,
        procedure: "probe".into(),
        f_d: None,
        f_g: None,
        f_q: None,
        probe_ser: Some(ser),
        snapshot_version: state.snapshot.version,
        wallclock_ms: clock.ms(),
    }
}

#[allow(clippy::too_many_arguments)]
fn alternate(
    state: &mut OnlineState,
    stream: &mut dyn ChannelStream,
    cfg: &OnlineConfig,
    pilot: &[f64],
    gan_rng: &mut Rng,
    det_rng: &mut Rng,
    probe_model: Option<(&ChannelModel, u64)>,
    clock: &Clock,
) -> Result<OnlineReport> {
    let mut report = OnlineReport::default();
    let (mut gan_done, mut det_done) = (0usize, 0usize);
    // A fresh pilot means a fresh snapshot before any detector update.
    state.publish(pilot);
    while gan_done < cfg.train_gan_steps || det_done < cfg.update_detector_steps {
        if gan_done < cfg.train_gan_steps && !report.exhausted {
            match stream.gather(cfg.gan.batch)? {
                Some(real) => {
                    let t = state.gan.train_step(&real, pilot, stream.constellation(), gan_rng)?;
                    state.gan_steps += 1;
                    state.publish(pilot);
                    report.trace.push(gan_row(state, &t, clock));
                    gan_done += 1;
                    if let Some((model, seed)) = probe_model {
                        if cfg.probe_every > 0 && gan_done % cfg.probe_every == 0 {
                            let ser = probe(state, model, cfg.probe_symbols, seed)?;
                            report.trace.push(probe_row(state, ser, clock));
                        }
                    }
                }
                None => report.exhausted = true,
            }
        } else if report.exhausted {
            gan_done = cfg.train_gan_steps;
        }
        if det_done < cfg.update_detector_steps {
            let snap = Arc::clone(&state.snapshot);
            let loss = update_detector_step(&mut state.detector, &snap, cfg.detector_batch, det_rng)?;
            state.detector_generation_passes += 1;
            state.detector_steps += 1;
            report.versions_read.push(snap.version);
            report.trace.push(TraceRow {
                step: state.detector_steps,
                procedure: "update_detector".into(),
                f_d: None,
                f_g: None,
                f_q: Some(loss),
                probe_ser: None,
                snapshot_version: snap.version,
                wallclock_ms: clock.ms(),
            });
            det_done += 1;
        }
    }
    if let Some((model, seed)) = probe_model {
        let ser = probe(state, model, cfg.probe_symbols, seed)?;
        report.trace.push(probe_row(state, ser, clock));
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn threaded(
    state: &mut OnlineState,
    stream: &mut dyn ChannelStream,
    cfg: &OnlineConfig,
    pilot: &[f64],
    gan_rng: &mut Rng,
    det_rng: &mut Rng,
    probe_model: Option<(&ChannelModel, u64)>,
    clock: &Clock,
) -> Result<OnlineReport> {
    state.publish(pilot);
    let cell = SnapshotCell::new((*state.snapshot).clone());
    let OnlineState {
        gan,
        detector,
        snapshot,
        gan_steps,
        detector_steps,
        detector_generation_passes,
    } = state;
    let start_version = snapshot.version;

    let (gan_result, det_result) = std::thread::scope(|scope| {
        let cell = &cell;
        let det = scope.spawn(move || -> Result<(Vec<TraceRow>, Vec<u64>)> {
            let mut rows = Vec::new();
            let mut versions = Vec::new();
            for _ in 0..cfg.update_detector_steps {
                let snap = cell.latest();
                let loss = update_detector_step(detector, &snap, cfg.detector_batch, det_rng)?;
                *detector_generation_passes += 1;
                *detector_steps += 1;
                versions.push(snap.version);
                rows.push(TraceRow {
                    step: *detector_steps,
                    procedure: "update_detector".into(),
                    f_d: None,
                    f_g: None,
                    f_q: Some(loss),
                    probe_ser: None,
                    snapshot_version: snap.version,
                    wallclock_ms: clock.ms(),
                });
            }
            Ok((rows, versions))
        });
        let mut rows = Vec::new();
        let mut exhausted = false;
        let mut version = start_version;
        let gan_result = (|| -> Result<()> {
            for _ in 0..cfg.train_gan_steps {
                let Some(real) = stream.gather(cfg.gan.batch)? else {
                    exhausted = true;
                    break;
                };
                let t = gan.train_step(&real, pilot, stream.constellation(), gan_rng)?;
                *gan_steps += 1;
                version += 1;
                cell.publish(take_snapshot(&gan.g, version, pilot));
                rows.push(TraceRow {
                    step: *gan_steps,
                    procedure: "train_gan".into(),
                    f_d: Some(t.f_d),
                    f_g: Some(t.f_g),
                    f_q: None,
                    probe_ser: None,
                    snapshot_version: version,
                    wallclock_ms: clock.ms(),
                });
            }
            Ok(())
        })();
        let det_result = det.join().expect("detector thread panicked");
        (gan_result.map(|_| (rows, exhausted)), det_result)
    });
    let (mut trace, exhausted) = gan_result?;
    let (det_rows, versions_read) = det_result?;
    trace.extend(det_rows);
    state.snapshot = cell.latest();
    let mut report = OnlineReport {
        trace,
        exhausted,
        versions_read,
    };
    if let Some((model, seed)) = probe_model {
        let ser = probe(state, model, cfg.probe_symbols, seed)?;
        report.trace.push(probe_row(state, ser, clock));
    }
    Ok(report)
}

/// Losses of one fused step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointStepTrace {
    pub f_d: f64,
    pub f_g: f64,
    pub f_q: f64,
    /// `f_D + λ·f_Q`: the adversarial value plus the weighted detector cost.
    pub total: f64,
}

/// Fused step: D ascent as usual, then one fake batch drives both the G
/// descent and the detector descent.
pub fn joint_train_step(
    state: &mut OnlineState,
    real: &RealBatch,
    pilot: &[f64],
    constellation: &Constellation,
    cfg: &JointStepConfig,
    rng: &mut Rng,
) -> Result<JointStepTrace> {
    if !(cfg.lambda_det >= 0.0) {
        return Err(Error::InvalidValue("lambda_det must be nonnegative".into()));
    }
    let eval = state.gan.discriminator_step(real, pilot, constellation, rng)?;
    let fake = state.gan.fake_batch(pilot, constellation, rng)?;
    let batch = LabeledBatch::from_matrices(fake.signals.clone(), &fake.symbols, constellation)?;
    let route = cfg.detector_grad_into_g && cfg.lambda_det > 0.0;
    let loss_layers = state.detector.loss_layers;
    let (f_q, det_grads, signal_grad) = if route {
        let (l, g, s) = state
            .detector
            .net
            .loss_gradients_and_signal_grad(&batch, loss_layers)?;
        (l, g, Some(s))
    } else {
        let (l, g) = state.detector.net.loss_and_gradients(&batch, loss_layers)?;
        (l, g, None)
    };
    let extra = signal_grad.map(|mut s| {
        s.data_mut().iter_mut().for_each(|v| *v *= cfg.lambda_det);
        s
    });
    let f_g = state.gan.generator_step_on(real, &fake, pilot, extra.as_ref())?;
    state.detector.apply(&det_grads)?;
    state.gan_steps += 1;
    state.detector_steps += 1;
    state.publish(pilot);
    Ok(JointStepTrace {
        f_d: eval.f_d,
        f_g,
        f_q,
        total: eval.f_d + cfg.lambda_det * f_q,
    })
}

/// Runs `steps` fused steps on `stream`.
pub fn joint_loop(
    state: &mut OnlineState,
    stream: &mut dyn ChannelStream,
    steps: usize,
    cfg: &JointStepConfig,
    online: &OnlineConfig,
    rng: &mut Rng,
    probe_model: Option<(&ChannelModel, u64)>,
) -> Result<OnlineReport> {
    let mut step_rng = rng.fork("joint");
    let pilot = stream.pilot().flattened();
    let clock = Clock {
        start: Instant::now(),
        enabled: online.record_wallclock,
    };
    let mut report = OnlineReport::default();
    state.publish(&pilot);
    for done in 1..=steps {
        let Some(real) = stream.gather(online.gan.batch)? else {
            report.exhausted = true;
            break;
        };
        let constellation = stream.constellation().clone();
        let t = joint_train_step(state, &real, &pilot, &constellation, cfg, &mut step_rng)?;
        report.trace.push(TraceRow {
            step: state.gan_steps,
            procedure: "joint".into(),
            f_d: Some(t.f_d),
            f_g: Some(t.f_g),
            f_q: Some(t.f_q),
            probe_ser: None,
            snapshot_version: state.snapshot.version,
            wallclock_ms: clock.ms(),
        });
        if let Some((model, seed)) = probe_model {
            if online.probe_every > 0 && done % online.probe_every == 0 {
                let ser = probe(state, model, online.probe_symbols, seed)?;
                report.trace.push(probe_row(state, ser, &clock));
            }
        }
    }
    if let Some((model, seed)) = probe_model {
        let ser = probe(state, model, online.probe_symbols, seed)?;
        report.trace.push(probe_row(state, ser, &clock));
    }
    Ok(report)
}

/// Writes a trace as CSV with the fixed column order.
pub fn write_trace(rows: &[TraceRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("trace", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ChannelKind;
    use crate::gan::gan_train_step;
    use crate::nn::DenseMatrix;

    fn small_cfg() -> OnlineConfig {
        OnlineConfig {
            gan: GanConfig { batch: 8, ..Default::default() },
            detector_batch: 8,
            train_gan_steps: 3,
            update_detector_steps: 3,
            ..Default::default()
        }
    }

    fn setup(cfg: &OnlineConfig, seed: u64) -> (OnlineState, StaticStream) {
        let model = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 8.0).unwrap();
        let mut rng = Rng::new(seed);
        let state = OnlineState::new(GanShape::new(4, 4).with_hidden(16), Constellation::bpsk(), cfg, &mut rng).unwrap();
        let stream = StaticStream::new(model, rng.fork("stream"), None).unwrap();
        (state, stream)
    }

    #[test]
    fn zero_budget_leaves_detector_at_init() {
        let cfg = OnlineConfig { train_gan_steps: 0, update_detector_steps: 0, ..small_cfg() };
        let (mut state, mut stream) = setup(&cfg, 1);
        let before = state.detector.net.clone();
        let report = online_loop(&mut state, &mut stream, &cfg, &mut Rng::new(2), None).unwrap();
        assert!(report.trace.is_empty());
        assert_eq!(state.detector.net, before);
    }

    #[test]
    fn snapshot_count_tracks_train_gan_steps() {
        let cfg = small_cfg();
        let (mut state, mut stream) = setup(&cfg, 1);
        let v0 = state.snapshot.version;
        online_loop(&mut state, &mut stream, &cfg, &mut Rng::new(2), None).unwrap();
        // One publish for the pilot refresh, then one per TrainGAN step.
        assert_eq!(state.snapshot.version - v0, 1 + cfg.train_gan_steps as u64);
        assert_eq!(state.gan_steps, 3);
        assert_eq!(state.detector_steps, 3);
    }

    #[test]
    fn alternating_schedule_is_deterministic() {
        let run = || {
            let cfg = small_cfg();
            let (mut state, mut stream) = setup(&cfg, 5);
            let r = online_loop(&mut state, &mut stream, &cfg, &mut Rng::new(6), None).unwrap();
            let mut buf = Vec::new();
            write_trace(&r.trace, &mut buf).unwrap();
            (buf, state.detector.net.checksum())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn threaded_readers_only_see_published_checksums() {
        let cfg = OnlineConfig { schedule: Schedule::Threaded, train_gan_steps: 4, update_detector_steps: 6, ..small_cfg() };
        let (mut state, mut stream) = setup(&cfg, 7);
        let report = online_loop(&mut state, &mut stream, &cfg, &mut Rng::new(8), None).unwrap();
        assert_eq!(report.versions_read.len(), 6);
        assert!(report.versions_read.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(state.gan_steps, 4);
        assert_eq!(state.snapshot.checksum, state.gan.g.params.checksum());
    }

    #[test]
    fn exhausted_stream_is_reported() {
        let cfg = small_cfg();
        let (mut state, _) = setup(&cfg, 1);
        let model = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 8.0).unwrap();
        let mut stream = StaticStream::new(model, Rng::new(3), Some(8)).unwrap();
        let report = online_loop(&mut state, &mut stream, &cfg, &mut Rng::new(2), None).unwrap();
        assert!(report.exhausted);
        assert_eq!(state.gan_steps, 1);
        assert_eq!(state.detector_steps, 3);
    }

    #[test]
    fn zero_detector_rate_leaves_detector_unchanged() {
        let cfg = OnlineConfig { detector_adam: AdamConfig::default().with_alpha(0.0), ..small_cfg() };
        let (mut state, _) = setup(&cfg, 1);
        let before = state.detector.net.clone();
        let snap = Arc::clone(&state.snapshot);
        update_detector_step(&mut state.detector, &snap, 8, &mut Rng::new(1)).unwrap();
        assert_eq!(state.detector.net, before);
    }

    #[test]
    fn zero_weight_detector_joint_cost_is_uniform() {
        let cfg = small_cfg();
        let (mut state, mut stream) = setup(&cfg, 1);
        for kernel in state.detector.net.kernels_mut().iter_mut().flatten() {
            for l in kernel.layers_mut() {
                l.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
            }
        }
        let real = stream.gather(8).unwrap().unwrap();
        let pilot = stream.pilot().flattened();
        let t = joint_train_step(&mut state, &real, &pilot, &Constellation::bpsk(), &JointStepConfig::default(), &mut Rng::new(0)).unwrap();
        assert!((t.f_q - 20.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_joint_step_matches_gan_step_bitwise() {
        let cfg = OnlineConfig { detector_adam: AdamConfig::default().with_alpha(0.0), ..small_cfg() };
        let (mut joint, stream) = setup(&cfg, 4);
        let mut plain = joint.gan.clone();
        let model = stream.model.clone();
        let pilot = PilotBlock::measure(&model, &mut Rng::new(9)).unwrap();
        let p = pilot.flattened();
        let jcfg = JointStepConfig { lambda_det: 0.0, detector_grad_into_g: true };
        let mut r1 = Rng::new(10);
        let mut r2 = Rng::new(10);
        for _ in 0..5 {
            gan_train_step(&mut plain, &model, &pilot, &mut r1).unwrap();
            let real = RealBatch::sample(&model, 8, &mut r2).unwrap();
            joint_train_step(&mut joint, &real, &p, model.constellation(), &jcfg, &mut r2).unwrap();
            assert_eq!(plain.g.params.checksum(), joint.gan.g.params.checksum());
            assert_eq!(plain.d.params.checksum(), joint.gan.d.params.checksum());
        }
        // The fused step spends two generator passes, the initial model three.
        assert_eq!(joint.generation_passes(), 10);
    }

    #[test]
    fn oracle_generator_teaches_noiseless_detection() {
        // Hand-built generator whose output is H·S̄: the hidden layers carry
        // a scaled copy of S̄ through the nearly linear part of tanh and the
        // head undoes the scale.
        let model = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 8.0)
            .unwrap()
            .with_noise_var(1e-8)
            .unwrap();
        let cfg = OnlineConfig { detector_adam: AdamConfig::default().with_alpha(1e-3), ..small_cfg() };
        let (mut state, _) = setup(&cfg, 3);
        let mut oracle = state.gan.g.clone();
        let layers = oracle.params.layers_mut();
        let width = GeneratorNet::input_width(&oracle.shape);
        let eps = 1e-3;
        for l in layers.iter_mut() {
            l.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
            l.batchnorm = None;
        }
        let pw = oracle.shape.pilot_width();
        for k in 0..4 {
            layers[0].weight.set(k, pw + k, eps);
            layers[1].weight.set(k, k, 1.0);
        }
        let h = model.matrix();
        let t1 = eps.tanh();
        let t2 = t1.tanh();
        for a in 0..4 {
            for k in 0..4 {
                layers[2].weight.set(a, k, h.get(a, k) * t1 / t2 / eps);
            }
        }
        assert_eq!(width, oracle.params.input_dim());
        let oracle = GeneratorNet { params: crate::nn::NetworkParams::from_layers(oracle.params.layers().to_vec()).unwrap(), shape: oracle.shape };
        let snap = take_snapshot(&oracle, 1, &vec![0.0; oracle.shape.pilot_width()]);
        let y = oracle.forward_with_noise(&snap.pilot, &DenseMatrix::row_vector(&[1.0, -1.0, 1.0, 1.0]), &DenseMatrix::zeros(1, 4), Mode::Eval).unwrap().0;
        let hs = model.mean_output(&crate::channels::SymbolVector(vec![1.0, -1.0, 1.0, 1.0])).unwrap();
        for (a, b) in y.data().iter().zip(&hs) {
            assert!((a - b).abs() < 1e-5);
        }
        let mut rng = Rng::new(4);
        for _ in 0..1500 {
            update_detector_step(&mut state.detector, &snap, 64, &mut rng).unwrap();
        }
        let r = ser_estimate(&state.detector.net, &model, SerBudget::fixed(2000), &mut Rng::new(5)).unwrap();
        assert_eq!(r.errors, 0);
    }
}
