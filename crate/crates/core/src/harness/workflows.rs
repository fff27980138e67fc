//! Single-scenario workflows: GAN training with a fidelity report, and the
//! gradient-check suites.

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::sweep::channel_at;
use crate::channels::{ChannelKind, ChannelModel, SymbolVector};
use crate::error::{Error, Result};
use crate::gan::{gan_train_step, GanTrainer, GeneratorNet, PilotBlock};
use crate::nn::gradcheck::{check_network, GradCheckReport};
use crate::nn::{derive_seed, Activation, DenseMatrix, LayerShape, Mode, NetworkParams, Rng};

/// One row of the GAN training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanTraceRow {
    pub step: u64,
    #[serde(rename = "f_D")]
    pub f_d: f64,
    #[serde(rename = "f_G")]
    pub f_g: f64,
    pub d_accuracy: f64,
}

/// Moments of generated signals for one conditioning pattern and output
/// dimension, against the true channel's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCell {
    pub pattern: String,
    pub dim: usize,
    pub target_mean: f64,
    pub mean: f64,
    pub target_variance: f64,
    pub variance: f64,
}

impl FidelityCell {
    pub fn mean_error(&self) -> f64 {
        (self.mean - self.target_mean).abs()
    }

    pub fn variance_ratio(&self) -> f64 {
        self.variance / self.target_variance
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FidelityReport {
    pub cells: Vec<FidelityCell>,
}

impl FidelityReport {
    pub fn max_mean_error(&self) -> f64 {
        self.cells.iter().map(FidelityCell::mean_error).fold(0.0, f64::max)
    }

    /// Largest `max(ratio, 1/ratio)` over all cells.
    pub fn worst_variance_factor(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| {
                let r = c.variance_ratio();
                r.max(1.0 / r)
            })
            .fold(1.0, f64::max)
    }

    pub fn passes(&self, mean_tol: f64, variance_factor: f64) -> bool {
        !self.cells.is_empty()
            && self.max_mean_error() <= mean_tol
            && self.worst_variance_factor() <= variance_factor
    }
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn all_patterns(channel: &ChannelModel) -> Vec<SymbolVector> {
    let m = channel.constellation().len();
    let k = channel.users();
    let total = m.pow(k as u32);
    (0..total)
        .map(|mut code| {
            let idx: Vec<usize> = (0..k)
                .map(|_| {
                    let i = code % m;
                    code /= m;
                    i
                })
                .collect();
            channel.constellation().vector_from_indices(&idx)
        })
        .collect()
}

/// Splits `samples` evenly over every symbol pattern, generates in eval
/// mode and compares per-dimension moments with the channel's. Targets are
/// exact for the linear channel and estimated from as many channel draws
/// otherwise.
pub fn gan_fidelity(
    g: &GeneratorNet,
    pilot: &[f64],
    channel: &ChannelModel,
    samples: usize,
    rng: &mut Rng,
) -> Result<FidelityReport> {
    let patterns = all_patterns(channel);
    let per = samples / patterns.len();
    if per < 2 {
        return Err(Error::InvalidValue(format!(
            "{samples} samples cannot cover {} patterns",
            patterns.len()
        )));
    }
    let r = channel.antennas();
    let mut cells = Vec::new();
    for s in &patterns {
        let symbols = DenseMatrix::from_fn(per, s.0.len(), |_, j| s.0[j]);
        let fake = g.generate_batch(pilot, symbols, rng, Mode::Eval)?;
        let real: Vec<Vec<f64>> = match channel.kind() {
            ChannelKind::LinearGaussian => Vec::new(),
            _ => (0..per)
                .map(|_| channel.transmit(s, rng).map(|y| y.0))
                .collect::<Result<_>>()?,
        };
        let clean = channel.mean_output(s)?;
        let label = s.0.iter().map(|v| if *v > 0.0 { '+' } else { '-' }).collect::<String>();
        for dim in 0..r {
            let (mean, variance) = moments(&fake.signals.column(dim));
            let (target_mean, target_variance) = if real.is_empty() {
                (clean[dim], channel.noise_var())
            } else {
                moments(&real.iter().map(|y| y[dim]).collect::<Vec<_>>())
            };
            cells.push(FidelityCell {
                pattern: label.clone(),
                dim,
                target_mean,
                mean,
                target_variance,
                variance,
            });
        }
    }
    Ok(FidelityReport { cells })
}

pub struct TrainGanRun {
    pub trainer: GanTrainer,
    pub pilot: PilotBlock,
    pub trace: Vec<GanTraceRow>,
    pub fidelity: FidelityReport,
}

/// Trains the GAN for `train_gan.steps` on the static channel at
/// `train_gan.snr_db`, then measures fidelity.
pub fn run_train_gan(cfg: &ScenarioConfig) -> Result<TrainGanRun> {
    cfg.validate()?;
    let model = channel_at(cfg, cfg.train_gan.snr_db)?;
    let mut root = Rng::new(derive_seed(cfg.seed, &["train_gan"]));
    let mut trainer = GanTrainer::new(cfg.gan_shape(), cfg.gan_config(), &mut root.fork("init"));
    let pilot = PilotBlock::measure(&model, &mut root.fork("pilot"))?;
    let mut rng = root.fork("steps");
    let mut trace = Vec::with_capacity(cfg.train_gan.steps);
    for step in 1..=cfg.train_gan.steps {
        let t = gan_train_step(&mut trainer, &model, &pilot, &mut rng)?;
        trace.push(GanTraceRow {
            step: step as u64,
            f_d: t.f_d,
            f_g: t.f_g,
            d_accuracy: t.d_accuracy,
        });
    }
    let fidelity = gan_fidelity(
        &trainer.g,
        &pilot.flattened(),
        &model,
        cfg.train_gan.fidelity_samples,
        &mut root.fork("fidelity"),
    )?;
    Ok(TrainGanRun {
        trainer,
        pilot,
        trace,
        fidelity,
    })
}

pub fn write_rows<T: Serialize>(rows: &[T], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}

/// Checks a small batch-normalized MLP under a random linear functional of
/// its output, for one output head.
fn mlp_check(name: &str, head: Activation, rng: &mut Rng) -> Result<GradCheckReport> {
    let shapes = [
        LayerShape::new(5, Activation::Tanh).with_batchnorm(),
        LayerShape::new(4, Activation::Sigmoid),
        LayerShape::new(3, head),
    ];
    let mut params = NetworkParams::glorot(3, &shapes, rng);
    let input = DenseMatrix::from_fn(6, 3, |_, _| rng.normal());
    let weights = DenseMatrix::from_fn(6, 3, |_, _| rng.normal());
    let (_, cache) = params.forward(&input, Mode::Train)?;
    let (grads, _) = params.backward(&cache, &weights)?;
    let objective = |p: &NetworkParams| {
        let (out, _) = p.forward(&input, Mode::Train).expect("shapes fixed");
        out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };
    Ok(check_network(name, &mut params, &grads, objective))
}

/// Every finite-difference suite: the MLP substrate, DeepSIC end to end,
/// and both adversarial objectives.
pub fn gradient_suites(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = Rng::new(derive_seed(seed, &["gradcheck"]));
    let mut reports = vec![
        mlp_check("mlp softmax head", Activation::Softmax, &mut rng)?,
        mlp_check("mlp identity head", Activation::Identity, &mut rng)?,
        mlp_check("mlp sigmoid head", Activation::Sigmoid, &mut rng)?,
    ];
    reports.push(crate::deepsic::gradient_check(rng.next_u64())?);
    reports.extend(crate::gan::gradient_checks(rng.next_u64())?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        let reports = gradient_suites(3).unwrap();
        assert_eq!(reports.len(), 6);
        for r in &reports {
            assert!(r.passed(1e-4), "{}: {}", r.name, r.max_relative_error);
        }
    }

    #[test]
    fn fidelity_covers_every_pattern_and_dimension() {
        let model = ChannelModel::standard(ChannelKind::LinearGaussian, 2, 2, 8.0).unwrap();
        let shape = crate::gan::GanShape::new(2, 2).with_hidden(4);
        let g = GeneratorNet::new(shape, &mut Rng::new(1));
        let report = gan_fidelity(&g, &vec![0.0; shape.pilot_width()], &model, 400, &mut Rng::new(2)).unwrap();
        assert_eq!(report.cells.len(), 4 * 2);
        assert!(report.cells.iter().all(|c| c.target_variance == model.noise_var()));
    }

    #[test]
    fn fidelity_targets_for_nonlinear_channels_are_estimated() {
        let model = ChannelModel::standard(ChannelKind::QuantizedGaussian, 2, 2, 8.0).unwrap();
        let shape = crate::gan::GanShape::new(2, 2).with_hidden(4);
        let g = GeneratorNet::new(shape, &mut Rng::new(1));
        let report = gan_fidelity(&g, &vec![0.0; shape.pilot_width()], &model, 400, &mut Rng::new(2)).unwrap();
        assert!(report.cells.iter().all(|c| c.target_mean.abs() <= 3.0 && c.target_variance > 0.0));
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let model = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 8.0).unwrap();
        let g = GeneratorNet::new(crate::gan::GanShape::new(4, 4).with_hidden(4), &mut Rng::new(1));
        assert!(gan_fidelity(&g, &[0.0; 40], &model, 20, &mut Rng::new(2)).is_err());
    }

    #[test]
    fn short_train_gan_run_is_deterministic() {
        let mut cfg = ScenarioConfig::default();
        cfg.gan.hidden = 8;
        cfg.train_gan.steps = 4;
        cfg.train_gan.fidelity_samples = 160;
        let a = run_train_gan(&cfg).unwrap();
        let b = run_train_gan(&cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.fidelity, b.fidelity);
        assert_eq!(a.trace.len(), 4);
    }
}
