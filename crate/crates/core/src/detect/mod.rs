//! Model-based baselines and the shared detection vocabulary.

mod map;
mod ser;
mod sic;

pub use map::{map_detect, MapDetector, MAP_SEARCH_LIMIT};
pub use ser::{binomial_sigma, difference_sigma, ser_estimate, SerBudget, SerResult};
pub use sic::{iterative_sic, SicConfig, SicDetector, SicInit, SicOutput, COVARIANCE_RIDGE};

use crate::channels::{Constellation, ReceivedSignal, SymbolVector};
use crate::error::{Error, Result};

/// Per-user probability vectors over the constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftBelief {
    pub probs: Vec<Vec<f64>>,
}

impl SoftBelief {
    pub fn uniform(users: usize, symbols: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / symbols as f64; symbols]; users],
        }
    }

    pub fn users(&self) -> usize {
        self.probs.len()
    }

    /// Index of the most probable symbol per user, lowest index on ties.
    pub fn hard_indices(&self) -> Vec<usize> {
        self.probs.iter().map(|p| argmax(p)).collect()
    }

    pub fn hard(&self, constellation: &Constellation) -> SymbolVector {
        constellation.vector_from_indices(&self.hard_indices())
    }

    /// Largest deviation of any user's total mass from 1, or infinity if a
    /// probability is negative or non-finite.
    pub fn normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for p in &self.probs {
            if p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return f64::INFINITY;
            }
            worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
        }
        worst
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Anything that maps a received signal to hard symbol decisions.
pub trait Detector: Sync {
    fn detect(&self, y: &ReceivedSignal) -> Result<SymbolVector>;

    fn detect_batch(&self, ys: &[ReceivedSignal]) -> Result<Vec<SymbolVector>> {
        ys.iter().map(|y| self.detect(y)).collect()
    }
}

impl<D: Detector + ?Sized> Detector for &D {
    fn detect(&self, y: &ReceivedSignal) -> Result<SymbolVector> {
        (**self).detect(y)
    }

    fn detect_batch(&self, ys: &[ReceivedSignal]) -> Result<Vec<SymbolVector>> {
        (**self).detect_batch(ys)
    }
}

pub(crate) fn check_len(y: &ReceivedSignal, antennas: usize) -> Result<()> {
    if y.len() != antennas {
        return Err(Error::dim(format!(
            "received {} values, expected {antennas}",
            y.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.9, 0.1]), 0);
        let b = SoftBelief { probs: vec![vec![0.9, 0.1], vec![0.5, 0.5]] };
        assert_eq!(b.hard(&Constellation::bpsk()).0, vec![-1.0, -1.0]);
    }

    #[test]
    fn normalization_error_flags_bad_rows() {
        assert!(SoftBelief::uniform(4, 2).normalization_error() < 1e-15);
        let b = SoftBelief { probs: vec![vec![-0.1, 1.1]] };
        assert!(b.normalization_error().is_infinite());
    }
}
