//! Monte Carlo symbol error rate estimation.

use serde::{Deserialize, Serialize};

use crate::channels::{ChannelModel, ReceivedSignal, SymbolVector};
use crate::error::{Error, Result};
use crate::nn::Rng;

use super::Detector;

/// How many vectors to simulate and when to stop early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerBudget {
    /// Upper bound on transmitted vectors.
    pub max_vectors: usize,
    /// Stop once this many symbol errors are seen (checked between chunks).
    pub min_errors: Option<usize>,
    /// Never stop early before this many symbols.
    pub min_symbols: usize,
}

impl SerBudget {
    pub fn fixed(vectors: usize) -> Self {
        Self {
            max_vectors: vectors,
            min_errors: None,
            min_symbols: 0,
        }
    }

    pub fn early_stop(max_vectors: usize, min_errors: usize, min_symbols: usize) -> Self {
        Self {
            max_vectors,
            min_errors: Some(min_errors),
            min_symbols,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SerResult {
    pub ser: f64,
    pub errors: u64,
    pub symbols: u64,
}

impl SerResult {
    pub fn from_counts(errors: u64, symbols: u64) -> Self {
        Self {
            ser: if symbols == 0 { 0.0 } else { errors as f64 / symbols as f64 },
            errors,
            symbols,
        }
    }

    /// Standard error of this estimate.
    pub fn sigma(&self) -> f64 {
        binomial_sigma(self.ser, self.symbols)
    }
}

pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Standard error of the difference of two independent estimates.
pub fn difference_sigma(a: &SerResult, b: &SerResult) -> f64 {
    (a.sigma().powi(2) + b.sigma().powi(2)).sqrt()
}

const CHUNK: usize = 1000;

/// Simulates uniform transmissions through `model` and counts per-user
/// symbol errors of `detector`.
pub fn ser_estimate(
    detector: &impl Detector,
    model: &ChannelModel,
    budget: SerBudget,
    rng: &mut Rng,
) -> Result<SerResult> {
    if budget.max_vectors == 0 {
        return Err(Error::InvalidValue("SER estimate needs at least one vector".into()));
    }
    let k = model.users();
    let mut errors = 0u64;
    let mut symbols = 0u64;
    let mut sent = 0usize;
    while sent < budget.max_vectors {
        let n = CHUNK.min(budget.max_vectors - sent);
        let mut tx: Vec<SymbolVector> = Vec::with_capacity(n);
        let mut rx: Vec<ReceivedSignal> = Vec::with_capacity(n);
        for _ in 0..n {
            let s = model.constellation().random_vector(k, rng);
            rx.push(model.transmit(&s, rng)?);
            tx.push(s);
        }
        let decided = detector.detect_batch(&rx)?;
        for (s, d) in tx.iter().zip(&decided) {
            errors += s.0.iter().zip(&d.0).filter(|(a, b)| a != b).count() as u64;
        }
        symbols += (n * k) as u64;
        sent += n;
        if let Some(target) = budget.min_errors {
            if errors >= target as u64 && symbols >= budget.min_symbols as u64 {
                break;
            }
        }
    }
    Ok(SerResult::from_counts(errors, symbols))
}
