//! Classification and adversarial loss terms.

use super::mlp::{softmax_backward_in_place, softmax_in_place};
use crate::error::{Error, Result};

/// Lower clamp for probabilities that enter a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

/// Vector-Jacobian product of softmax: dL/dlogits from dL/dprobs.
pub fn softmax_backward(probs: &[f64], grad: &[f64]) -> Vec<f64> {
    let mut g = grad.to_vec();
    softmax_backward_in_place(probs, &mut g);
    g
}

/// Cross-entropy of `softmax(logits)` against `target`, with its gradient
/// `softmax(logits) − one_hot(target)`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if target >= logits.len() {
        return Err(Error::InvalidValue(format!(
            "target class {target} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = (log_sum - logits[target]).max(0.0);
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Cross-entropy from probabilities that already went through a softmax,
/// with the gradient taken with respect to those probabilities.
pub fn probability_cross_entropy(probs: &[f64], target: usize) -> (f64, Vec<f64>) {
    let p = probs[target].max(f64::MIN_POSITIVE);
    let mut grad = vec![0.0; probs.len()];
    grad[target] = -1.0 / p;
    (-p.ln(), grad)
}

#[inline]
pub fn clamp_probability(d: f64) -> f64 {
    d.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
}

/// `(ln d, ln(1 − d))` with `d` clamped into `[1e-12, 1 − 1e-12]`.
pub fn binary_log_terms(d: f64) -> (f64, f64) {
    let c = clamp_probability(d);
    (c.ln(), (1.0 - c).ln())
}

/// Derivatives of the two terms of [`binary_log_terms`] with respect to `d`.
/// Zero where the clamp is active.
pub fn binary_log_derivatives(d: f64) -> (f64, f64) {
    if !(LOG_CLAMP..=1.0 - LOG_CLAMP).contains(&d) {
        (0.0, 0.0)
    } else {
        (1.0 / d, -1.0 / (1.0 - d))
    }
}
