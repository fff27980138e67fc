//! Central finite-difference tooling for checking analytic gradients.

use super::mlp::{Gradients, NetworkParams};

/// Perturbation used for every central difference.
pub const FD_STEP: f64 = 1e-5;

/// Floor on the denominator so that gradients which are zero analytically
/// are judged in absolute terms.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares `analytic` against `(f(θ + h) − f(θ − h)) / 2h` for every
/// trainable value of `params`, restoring each value afterwards.
pub fn check_network(
    name: &str,
    params: &mut NetworkParams,
    analytic: &Gradients,
    mut objective: impl FnMut(&NetworkParams) -> f64,
) -> GradCheckReport {
    let flat = analytic.flatten();
    let shape: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    for (slice, &len) in shape.iter().enumerate() {
        for i in 0..len {
            let original = params.param_slices()[slice][i];
            params.param_slices_mut()[slice][i] = original + FD_STEP;
            let plus = objective(params);
            params.param_slices_mut()[slice][i] = original - FD_STEP;
            let minus = objective(params);
            params.param_slices_mut()[slice][i] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(flat[idx], numeric));
            idx += 1;
        }
    }
    GradCheckReport {
        name: name.to_string(),
        checked: idx,
        max_relative_error: worst,
    }
}

/// Same check for a plain vector argument.
pub fn check_vector(
    name: &str,
    point: &[f64],
    analytic: &[f64],
    mut objective: impl FnMut(&[f64]) -> f64,
) -> GradCheckReport {
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let original = x[i];
        x[i] = original + FD_STEP;
        let plus = objective(&x);
        x[i] = original - FD_STEP;
        let minus = objective(&x);
        x[i] = original;
        worst = worst.max(relative_error(analytic[i], (plus - minus) / (2.0 * FD_STEP)));
    }
    GradCheckReport {
        name: name.to_string(),
        checked: x.len(),
        max_relative_error: worst,
    }
}
