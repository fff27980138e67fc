//! Iterative soft interference cancellation.

use crate::channels::{ChannelKind, ChannelModel, ReceivedSignal, SymbolVector};
use crate::error::{Error, Result};
use crate::nn::matrix::cholesky_solve;
use crate::nn::DenseMatrix;

use super::{check_len, Detector, SoftBelief};

/// Diagonal loading added to every interference-plus-noise covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SicInit {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SicConfig {
    pub iterations: usize,
    pub init: SicInit,
}

impl Default for SicConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            init: SicInit::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SicOutput {
    /// Beliefs after each iteration; the last entry is the final estimate.
    pub layers: Vec<SoftBelief>,
    pub hard: SymbolVector,
}

impl SicOutput {
    pub fn beliefs(&self) -> &SoftBelief {
        self.layers.last().expect("at least one iteration")
    }
}

/// Runs `cfg.iterations` rounds of soft interference cancellation on a
/// linear Gaussian channel. Every user is updated from the previous round's
/// beliefs.
pub fn iterative_sic(y: &ReceivedSignal, model: &ChannelModel, cfg: &SicConfig) -> Result<SicOutput> {
    if model.kind() != ChannelKind::LinearGaussian {
        return Err(Error::InvalidValue(format!(
            "iterative SIC assumes a linear Gaussian channel, got {}",
            model.kind()
        )));
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidValue("SIC needs at least one iteration".into()));
    }
    let (k_users, r) = (model.users(), model.antennas());
    check_len(y, r)?;
    let h = model.matrix();
    let columns: Vec<Vec<f64>> = (0..k_users).map(|k| h.column(k)).collect();
    let symbols = model.constellation().symbols();
    let mut beliefs = SoftBelief::uniform(k_users, symbols.len());
    let mut layers = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        let moments: Vec<(f64, f64)> = beliefs
            .probs
            .iter()
            .map(|q| {
                let mean: f64 = q.iter().zip(symbols).map(|(p, s)| p * s).sum();
                let second: f64 = q.iter().zip(symbols).map(|(p, s)| p * s * s).sum();
                (mean, (second - mean * mean).max(0.0))
            })
            .collect();
        let mut next = Vec::with_capacity(k_users);
        for k in 0..k_users {
            let mut residual = y.0.clone();
            let mut cov = DenseMatrix::identity(r);
            for i in 0..r {
                cov.set(i, i, model.noise_var() + COVARIANCE_RIDGE);
            }
            for j in (0..k_users).filter(|&j| j != k) {
                let (e, v) = moments[j];
                let hj = &columns[j];
                for a in 0..r {
                    residual[a] -= hj[a] * e;
                    for b in 0..r {
                        let c = cov.get(a, b) + v * hj[a] * hj[b];
                        cov.set(a, b, c);
                    }
                }
            }
            let hk = &columns[k];
            let mut log_q = Vec::with_capacity(symbols.len());
            for &s in symbols {
                let diff: Vec<f64> = residual.iter().zip(hk).map(|(y, h)| y - h * s).collect();
                let solved = cholesky_solve(&cov, &diff)
                    .ok_or_else(|| Error::InvalidValue("interference covariance is not positive definite".into()))?;
                let quad: f64 = diff.iter().zip(&solved).map(|(a, b)| a * b).sum();
                log_q.push(-0.5 * quad);
            }
            next.push(normalize_log(&log_q));
        }
        beliefs = SoftBelief { probs: next };
        layers.push(beliefs.clone());
    }
    let hard = beliefs.hard(model.constellation());
    Ok(SicOutput { layers, hard })
}

fn normalize_log(log_q: &[f64]) -> Vec<f64> {
    let max = log_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_q.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// SIC applied to any channel through a linear Gaussian stand-in.
///
/// The quantized channel is treated as its unquantized linear model. The
/// Poisson channel `y ~ Poisson(HS/σ + 1)` is matched to first order by
/// `y − 1 ≈ (H/σ) S + w` with unit-variance noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SicDetector {
    surrogate: ChannelModel,
    offset: f64,
    config: SicConfig,
}

impl SicDetector {
    pub fn new(model: &ChannelModel, config: SicConfig) -> Result<Self> {
        let (surrogate, offset) = match model.kind() {
            ChannelKind::LinearGaussian => (model.clone(), 0.0),
            ChannelKind::QuantizedGaussian => (
                ChannelModel::new(
                    ChannelKind::LinearGaussian,
                    model.matrix().clone(),
                    model.noise_var(),
                    model.constellation().clone(),
                )?,
                0.0,
            ),
            ChannelKind::Poisson => {
                let sigma = model.noise_var().sqrt();
                let h = model.matrix();
                let scaled = DenseMatrix::from_fn(h.rows(), h.cols(), |i, j| h.get(i, j) / sigma);
                (
                    ChannelModel::new(
                        ChannelKind::LinearGaussian,
                        scaled,
                        1.0,
                        model.constellation().clone(),
                    )?,
                    1.0,
                )
            }
        };
        Ok(Self {
            surrogate,
            offset,
            config,
        })
    }

    pub fn surrogate(&self) -> &ChannelModel {
        &self.surrogate
    }

    pub fn run(&self, y: &ReceivedSignal) -> Result<SicOutput> {
        if self.offset == 0.0 {
            return iterative_sic(y, &self.surrogate, &self.config);
        }
        let shifted = ReceivedSignal(y.0.iter().map(|v| v - self.offset).collect());
        iterative_sic(&shifted, &self.surrogate, &self.config)
    }
}

impl Detector for SicDetector {
    fn detect(&self, y: &ReceivedSignal) -> Result<SymbolVector> {
        Ok(self.run(y)?.hard)
    }
}
