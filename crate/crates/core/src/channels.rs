//! Channel simulators and their exact log-likelihoods.
//!
//! Three memoryless channels map a transmitted vector `S` (length `K`) to a
//! received vector `Y` (length `R`) through a fixed matrix `H`:
//!
//! - linear Gaussian: `Y = HS + W`, `W ~ N(0, σ² I)`;
//! - quantized Gaussian: `Y = q(HS + W)` with the four-level quantizer
//!   `q(y) = sign(y)` for `|y| < 2` and `3·sign(y)` otherwise;
//! - Poisson: `Y_i ~ Poisson(λ_i)`, `λ_i = (HS)_i / σ + 1`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, Rng};

/// Smallest Poisson rate; `λ_i` is clamped up to this when `(HS)_i / σ < −1`.
pub const POISSON_RATE_FLOOR: f64 = 1e-6;

/// Quantizer output levels, in cell order.
pub const QUANTIZER_LEVELS: [f64; 4] = [-3.0, -1.0, 1.0, 3.0];

/// Ordered set of real transmit symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Constellation {
    symbols: Vec<f64>,
}

impl Constellation {
    pub fn new(symbols: Vec<f64>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Empty("constellation"));
        }
        if symbols.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidValue("constellation points must be finite".into()));
        }
        for (i, a) in symbols.iter().enumerate() {
            if symbols[..i].contains(a) {
                return Err(Error::InvalidValue(format!("duplicate constellation point {a}")));
            }
        }
        Ok(Self { symbols })
    }

    /// `[−1, +1]`.
    pub fn bpsk() -> Self {
        Self {
            symbols: vec![-1.0, 1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[f64] {
        &self.symbols
    }

    #[inline]
    pub fn symbol(&self, index: usize) -> f64 {
        self.symbols[index]
    }

    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.symbols.iter().position(|&s| s == value)
    }

    pub fn random_vector(&self, users: usize, rng: &mut Rng) -> SymbolVector {
        SymbolVector((0..users).map(|_| self.symbols[rng.index(self.len())]).collect())
    }

    /// Symbol vector for constellation indices `idx`.
    pub fn vector_from_indices(&self, idx: &[usize]) -> SymbolVector {
        SymbolVector(idx.iter().map(|&i| self.symbols[i]).collect())
    }

    pub fn indices_of(&self, s: &SymbolVector) -> Result<Vec<usize>> {
        s.0.iter()
            .map(|&v| {
                self.index_of(v)
                    .ok_or_else(|| Error::InvalidValue(format!("{v} is not a constellation point")))
            })
            .collect()
    }
}

impl TryFrom<Vec<f64>> for Constellation {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Constellation::new(v)
    }
}

impl From<Constellation> for Vec<f64> {
    fn from(c: Constellation) -> Self {
        c.symbols
    }
}

/// Transmitted symbols, one per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolVector(pub Vec<f64>);

/// Channel output, one value per receive antenna.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceivedSignal(pub Vec<f64>);

impl SymbolVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl ReceivedSignal {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    #[serde(rename = "linear")]
    LinearGaussian,
    #[serde(rename = "quantized")]
    QuantizedGaussian,
    #[serde(rename = "poisson")]
    Poisson,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 3] = [
        ChannelKind::LinearGaussian,
        ChannelKind::QuantizedGaussian,
        ChannelKind::Poisson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::LinearGaussian => "linear",
            ChannelKind::QuantizedGaussian => "quantized",
            ChannelKind::Poisson => "poisson",
        }
    }
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ChannelKind::LinearGaussian),
            "quantized" => Ok(ChannelKind::QuantizedGaussian),
            "poisson" => Ok(ChannelKind::Poisson),
            other => Err(Error::Config(format!(
                "unknown channel kind {other:?} (expected linear, quantized or poisson)"
            ))),
        }
    }
}

/// `H[i][j] = e^{−|i−j|}` for an `R × K` matrix.
pub fn exp_decay_channel_matrix(users: usize, antennas: usize) -> DenseMatrix {
    DenseMatrix::from_fn(antennas, users, |i, j| (-(i.abs_diff(j) as f64)).exp())
}

/// `σ² = 10^{−snr_db/10}` under unit-energy symbols.
pub fn snr_to_noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Four-level quantizer. Ties at `|y| = 2` go to the outer level and
/// `y = 0` maps to `+1`.
pub fn quantize(y: f64) -> f64 {
    let sign = if y < 0.0 { -1.0 } else { 1.0 };
    if y.abs() < 2.0 {
        sign
    } else {
        3.0 * sign
    }
}

/// A memoryless MIMO channel with known matrix and noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    kind: ChannelKind,
    h: DenseMatrix,
    noise_var: f64,
    constellation: Constellation,
}

impl ChannelModel {
    pub fn new(
        kind: ChannelKind,
        h: DenseMatrix,
        noise_var: f64,
        constellation: Constellation,
    ) -> Result<Self> {
        if h.rows() == 0 || h.cols() == 0 {
            return Err(Error::dim("channel matrix needs R, K >= 1"));
        }
        if !h.is_finite() {
            return Err(Error::InvalidValue("channel matrix has non-finite entries".into()));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "noise variance must be positive, got {noise_var}"
            )));
        }
        Ok(Self {
            kind,
            h,
            noise_var,
            constellation,
        })
    }

    /// BPSK through the exponential-decay matrix at `snr_db`.
    pub fn standard(kind: ChannelKind, users: usize, antennas: usize, snr_db: f64) -> Result<Self> {
        Self::new(
            kind,
            exp_decay_channel_matrix(users, antennas),
            snr_to_noise_var(snr_db),
            Constellation::bpsk(),
        )
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.h
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn users(&self) -> usize {
        self.h.cols()
    }

    pub fn antennas(&self) -> usize {
        self.h.rows()
    }

    /// Copy of this channel at a different noise level.
    pub fn with_noise_var(&self, noise_var: f64) -> Result<Self> {
        Self::new(self.kind, self.h.clone(), noise_var, self.constellation.clone())
    }

    fn check_symbols(&self, s: &SymbolVector) -> Result<()> {
        if s.len() != self.users() {
            return Err(Error::dim(format!(
                "{} symbols for a channel with {} users",
                s.len(),
                self.users()
            )));
        }
        Ok(())
    }

    /// `HS`.
    pub fn mean_output(&self, s: &SymbolVector) -> Result<Vec<f64>> {
        self.check_symbols(s)?;
        self.h.mul_vec(&s.0)
    }

    /// Poisson rates `max((HS)_i / σ + 1, floor)`.
    pub fn poisson_rates(&self, s: &SymbolVector) -> Result<Vec<f64>> {
        let scale = 1.0 / self.noise_var.sqrt();
        Ok(self
            .mean_output(s)?
            .into_iter()
            .map(|m| (scale * m + 1.0).max(POISSON_RATE_FLOOR))
            .collect())
    }

    /// Channel output for an explicit Gaussian noise vector. Only meaningful
    /// for the two Gaussian channels.
    pub fn output_with_noise(&self, s: &SymbolVector, noise: &[f64]) -> Result<ReceivedSignal> {
        let mean = self.mean_output(s)?;
        if noise.len() != mean.len() {
            return Err(Error::dim("noise vector length differs from R"));
        }
        let y = mean.iter().zip(noise).map(|(m, w)| m + w);
        Ok(ReceivedSignal(match self.kind {
            ChannelKind::QuantizedGaussian => y.map(quantize).collect(),
            _ => y.collect(),
        }))
    }

    pub fn transmit(&self, s: &SymbolVector, rng: &mut Rng) -> Result<ReceivedSignal> {
        match self.kind {
            ChannelKind::LinearGaussian | ChannelKind::QuantizedGaussian => {
                let sigma = self.noise_var.sqrt();
                let noise: Vec<f64> = (0..self.antennas()).map(|_| sigma * rng.normal()).collect();
                self.output_with_noise(s, &noise)
            }
            ChannelKind::Poisson => Ok(ReceivedSignal(
                self.poisson_rates(s)?
                    .into_iter()
                    .map(|l| rng.poisson(l))
                    .collect(),
            )),
        }
    }

    /// `ln P(y | s)` under this channel.
    pub fn log_likelihood(&self, y: &ReceivedSignal, s: &SymbolVector) -> Result<f64> {
        if y.len() != self.antennas() {
            return Err(Error::dim(format!(
                "received {} values for a channel with {} antennas",
                y.len(),
                self.antennas()
            )));
        }
        match self.kind {
            ChannelKind::LinearGaussian => {
                let mean = self.mean_output(s)?;
                let var = self.noise_var;
                let norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
                Ok(y.0
                    .iter()
                    .zip(mean)
                    .map(|(yi, m)| norm - (yi - m) * (yi - m) / (2.0 * var))
                    .sum())
            }
            ChannelKind::QuantizedGaussian => {
                let mean = self.mean_output(s)?;
                let sigma = self.noise_var.sqrt();
                let mut total = 0.0;
                for (&yi, m) in y.0.iter().zip(mean) {
                    let cell = QUANTIZER_LEVELS.iter().position(|&l| l == yi).ok_or_else(|| {
                        Error::InvalidValue(format!("{yi} is not a quantizer level"))
                    })?;
                    total += log_cell_probability(cell, m, sigma);
                }
                Ok(total)
            }
            ChannelKind::Poisson => {
                let rates = self.poisson_rates(s)?;
                let mut total = 0.0;
                for (&yi, l) in y.0.iter().zip(rates) {
                    if !(yi >= 0.0 && yi.fract() == 0.0 && yi.is_finite()) {
                        return Err(Error::InvalidValue(format!(
                            "{yi} is not a nonnegative integer count"
                        )));
                    }
                    total += yi * l.ln() - l - ln_gamma(yi + 1.0);
                }
                Ok(total)
            }
        }
    }
}

/// Cell boundaries of the quantizer: `(−∞,−2)`, `(−2,0)`, `(0,2)`, `(2,∞)`.
pub fn quantizer_cell(cell: usize) -> (f64, f64) {
    match cell {
        0 => (f64::NEG_INFINITY, -2.0),
        1 => (-2.0, 0.0),
        2 => (0.0, 2.0),
        3 => (2.0, f64::INFINITY),
        _ => panic!("quantizer has four cells"),
    }
}

/// `ln P(a < X < b)` for `X ~ N(mean, sigma²)` over quantizer cell `cell`.
pub fn log_cell_probability(cell: usize, mean: f64, sigma: f64) -> f64 {
    let (a, b) = quantizer_cell(cell);
    log_normal_interval((a - mean) / sigma, (b - mean) / sigma)
}

/// `ln Q(x)` where `Q` is the standard normal upper tail, accurate far into
/// the tail.
fn log_upper_tail(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x == f64::INFINITY {
        f64::NEG_INFINITY
    } else if x < 25.0 {
        (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let x2 = x * x;
        -0.5 * x2 - (x * (2.0 * std::f64::consts::PI).sqrt()).ln()
            + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// `ln(1 − e^{a})` for `a ≤ 0`.
fn ln_one_minus_exp(a: f64) -> f64 {
    if a > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// `ln(Φ(b) − Φ(a))` for standardized bounds `a < b`.
fn log_normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        // Both bounds in the upper half: Q(a) − Q(b).
        let la = log_upper_tail(a);
        la + ln_one_minus_exp(log_upper_tail(b) - la)
    } else if b <= 0.0 {
        // Mirror into the upper half.
        log_normal_interval(-b, -a)
    } else {
        // Straddles zero: 1 − Q(b) − Q(−a), no cancellation.
        (1.0 - log_upper_tail(b).exp() - log_upper_tail(-a).exp()).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson_normal_mass(a: f64, b: f64) -> f64 {
        // Independent oracle: composite Simpson rule on the standard normal pdf.
        let n = 20_000;
        let h = (b - a) / n as f64;
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(a) + pdf(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(x);
        }
        s * h / 3.0
    }

    #[test]
    fn exp_decay_entries() {
        let h = exp_decay_channel_matrix(4, 4);
        assert_eq!(h.get(0, 0), 1.0);
        assert!((h.get(0, 1) - 0.36788).abs() < 1e-5);
        assert!((h.get(0, 3) - 0.049787).abs() < 1e-6);
        assert_eq!(h, h.transpose());
        let wide = exp_decay_channel_matrix(3, 2);
        assert_eq!((wide.rows(), wide.cols()), (2, 3));
    }

    #[test]
    fn snr_mapping() {
        assert_eq!(snr_to_noise_var(0.0), 1.0);
        assert!((snr_to_noise_var(10.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_noise_var(14.0) - 0.039811).abs() < 1e-6);
    }

    #[test]
    fn quantizer_cases() {
        assert_eq!(quantize(0.5), 1.0);
        assert_eq!(quantize(-1.9), -1.0);
        assert_eq!(quantize(2.5), 3.0);
        assert_eq!(quantize(-7.0), -3.0);
        assert_eq!(quantize(2.0), 3.0);
        assert_eq!(quantize(-2.0), -3.0);
        assert_eq!(quantize(0.0), 1.0);
    }

    #[test]
    fn noiseless_linear_output_is_hs() {
        let ch = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 10.0).unwrap();
        let s = SymbolVector(vec![1.0, -1.0, -1.0, 1.0]);
        let y = ch.output_with_noise(&s, &[0.0; 4]).unwrap();
        assert_eq!(y.0, ch.mean_output(&s).unwrap());
    }

    #[test]
    fn cell_probability_matches_quadrature() {
        let p = log_cell_probability(2, 0.0, 1.0).exp();
        let oracle = simpson_normal_mass(0.0, 2.0);
        assert!((p - oracle).abs() < 1e-10);
        assert!((p - 0.47725).abs() < 1e-5);
        let p = log_cell_probability(1, 0.7, 0.6).exp();
        let oracle = simpson_normal_mass((-2.0 - 0.7) / 0.6, (0.0 - 0.7) / 0.6);
        assert!((p - oracle).abs() < 1e-10);
    }

    #[test]
    fn cells_partition_the_line() {
        for &(mu, sigma) in &[(0.0, 1.0), (1.3, 0.2), (-2.0, 3.0), (5.0, 0.5), (0.01, 1e-4)] {
            let total: f64 = (0..4).map(|c| log_cell_probability(c, mu, sigma).exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "mu {mu} sigma {sigma}: {total}");
        }
    }

    #[test]
    fn far_tail_stays_finite() {
        let l = log_cell_probability(3, -1.0, 0.01);
        assert!(l.is_finite() && l < -40_000.0);
    }

    #[test]
    fn zero_residual_gaussian_likelihood() {
        let ch = ChannelModel::standard(ChannelKind::LinearGaussian, 4, 4, 0.0).unwrap();
        let s = SymbolVector(vec![1.0, 1.0, -1.0, 1.0]);
        let y = ReceivedSignal(ch.mean_output(&s).unwrap());
        let ll = ch.log_likelihood(&y, &s).unwrap();
        let expect = -2.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn invalid_discrete_outputs_are_rejected() {
        let q = ChannelModel::standard(ChannelKind::QuantizedGaussian, 2, 2, 4.0).unwrap();
        let s = SymbolVector(vec![1.0, -1.0]);
        assert!(q.log_likelihood(&ReceivedSignal(vec![0.5, 1.0]), &s).is_err());
        let p = ChannelModel::standard(ChannelKind::Poisson, 2, 2, 4.0).unwrap();
        assert!(p.log_likelihood(&ReceivedSignal(vec![-1.0, 1.0]), &s).is_err());
        assert!(p.log_likelihood(&ReceivedSignal(vec![1.5, 1.0]), &s).is_err());
        assert!(p.log_likelihood(&ReceivedSignal(vec![2.0, 0.0]), &s).is_ok());
    }

    #[test]
    fn poisson_rate_clamp() {
        let p = ChannelModel::standard(ChannelKind::Poisson, 4, 4, 14.0).unwrap();
        let rates = p.poisson_rates(&SymbolVector(vec![-1.0; 4])).unwrap();
        assert!(rates.iter().all(|&l| l == POISSON_RATE_FLOOR));
    }

    #[test]
    fn constellation_validation() {
        assert!(Constellation::new(vec![]).is_err());
        assert!(Constellation::new(vec![1.0, 1.0]).is_err());
        let c = Constellation::bpsk();
        assert_eq!(c.index_of(-1.0), Some(0));
        assert_eq!(c.index_of(0.0), None);
    }
}
