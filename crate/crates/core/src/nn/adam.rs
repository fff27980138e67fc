//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, NetworkParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    /// Learning rate 1e-4 and beta1 = 0.5 as used for every network here;
    /// beta2 and epsilon are the usual Adam defaults.
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Minimize the objective.
    Descend,
    /// Maximize the objective.
    Ascend,
}

/// Moment estimates mirroring one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: Gradients::zeros_like(params),
            second_moment: Gradients::zeros_like(params),
            step_count: 0,
        }
    }

    /// One Adam update of `params` from `grads`.
    ///
    /// `Ascend` feeds the optimizer the negated gradient, so ascending on `g`
    /// and descending on `−g` produce identical updates.
    pub fn step(
        &mut self,
        params: &mut NetworkParams,
        grads: &Gradients,
        direction: Direction,
    ) -> Result<()> {
        if !grads.mirrors(params) || !self.first_moment.mirrors(params) {
            return Err(Error::dim("gradient or moment shapes do not mirror the network"));
        }
        self.step_count += 1;
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let sign = match direction {
            Direction::Descend => 1.0,
            Direction::Ascend => -1.0,
        };
        let mut m = self.first_moment.slices_mut();
        let mut v = self.second_moment.slices_mut();
        let g = grads.slices();
        let mut p = params.param_slices_mut();
        for (((ps, gs), ms), vs) in p.iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
            for i in 0..ps.len() {
                let gi = sign * gs[i];
                ms[i] = beta1 * ms[i] + (1.0 - beta1) * gi;
                vs[i] = beta2 * vs[i] + (1.0 - beta2) * gi * gi;
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                ps[i] -= alpha * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
