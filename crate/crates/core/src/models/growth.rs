//! The nonlinear growth model.
//!
//! `x_t = a_{t-1}(x_{t-1}) + sigma_u u` with
//! `a_{t-1}(x) = alpha0 x + alpha1 x / (1 + x^2) + alpha2 cos(1.2 (t - 1))`,
//! and `y_t = b x_t^2 + sigma_v v`.
//!
//! The model block is `(alpha0, b, ln sigma_u)`. A learned proposal sees the
//! drift mean `a_{t-1}(x)` and the observation, not the raw state.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{normal_log_density, Dynamics, Observation};
use crate::neural::GaussianStep;

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthModel {
    pub alpha1: f64,
    pub alpha2: f64,
    pub observation_std: f64,
    pub prior_std: f64,
}

/// Indices into the model block.
pub const ALPHA0: usize = 0;
pub const B: usize = 1;
pub const LOG_SIGMA_U: usize = 2;

impl Default for GrowthModel {
    fn default() -> Self {
        Self {
            alpha1: 25.0,
            alpha2: 8.0,
            observation_std: 1.0,
            prior_std: 5f64.sqrt(),
        }
    }
}

impl GrowthModel {
    /// Model block for natural-scale `(alpha0, b, sigma_u)`.
    pub fn theta(alpha0: f64, b: f64, sigma_u: f64) -> Vec<f64> {
        vec![alpha0, b, sigma_u.ln()]
    }

    /// Drift mean `a_{t-1}(x)` for the move into time `t`.
    pub fn drift(&self, theta: &[f64], x: f64, t: usize) -> f64 {
        let phase = 1.2 * (t as f64 - 1.0);
        theta[ALPHA0] * x + self.alpha1 * x / (1.0 + x * x) + self.alpha2 * phase.cos()
    }

    fn sigma_u(theta: &[f64]) -> f64 {
        theta[LOG_SIGMA_U].exp()
    }
}

impl Dynamics for GrowthModel {
    fn dim_x(&self) -> usize {
        1
    }

    fn dim_y(&self) -> usize {
        1
    }

    fn model_param_len(&self) -> usize {
        3
    }

    fn natural_params(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[ALPHA0], theta[B], theta[LOG_SIGMA_U].exp()]
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z: f64 = rng.sample(StandardNormal);
        vec![self.prior_std * z]
    }

    fn sample_transition(&self, theta: &[f64], x: &[f64], t: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        let z: f64 = rng.sample(StandardNormal);
        vec![self.drift(theta, x[0], t) + Self::sigma_u(theta) * z]
    }

    fn sample_emission(&self, theta: &[f64], x: &[f64], _t: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        let z: f64 = rng.sample(StandardNormal);
        vec![theta[B] * x[0] * x[0] + self.observation_std * z]
    }

    fn log_transition(&self, theta: &[f64], x: &[f64], x_next: &[f64], t: usize) -> f64 {
        let s = Self::sigma_u(theta);
        normal_log_density(x_next[0], self.drift(theta, x[0], t), s * s)
    }

    fn log_emission(&self, theta: &[f64], x: &[f64], y: &Observation) -> f64 {
        let s = self.observation_std;
        normal_log_density(y.values[0], theta[B] * x[0] * x[0], s * s)
    }

    fn score_transition(&self, theta: &[f64], x: &[f64], x_next: &[f64], t: usize, out: &mut [f64]) {
        let s2 = Self::sigma_u(theta).powi(2);
        let r = x_next[0] - self.drift(theta, x[0], t);
        out[ALPHA0] += r * x[0] / s2;
        out[LOG_SIGMA_U] += r * r / s2 - 1.0;
    }

    fn score_emission(&self, theta: &[f64], x: &[f64], y: &Observation, out: &mut [f64]) -> Result<()> {
        let x2 = x[0] * x[0];
        out[B] += (y.values[0] - theta[B] * x2) * x2 / self.observation_std.powi(2);
        Ok(())
    }

    fn grad_next_log_transition(&self, theta: &[f64], x: &[f64], x_next: &[f64], t: usize, out: &mut [f64]) {
        let s2 = Self::sigma_u(theta).powi(2);
        out[0] -= (x_next[0] - self.drift(theta, x[0], t)) / s2;
    }

    fn grad_state_log_emission(&self, theta: &[f64], x: &[f64], y: &Observation, out: &mut [f64]) -> Result<()> {
        let b = theta[B];
        out[0] += (y.values[0] - b * x[0] * x[0]) * 2.0 * b * x[0] / self.observation_std.powi(2);
        Ok(())
    }

    fn bootstrap(&self, theta: &[f64], x: &[f64], t: usize) -> GaussianStep {
        GaussianStep {
            mean: vec![self.drift(theta, x[0], t)],
            log_std: vec![theta[LOG_SIGMA_U]],
        }
    }

    fn bootstrap_backward(&self, _theta: &[f64], x: &[f64], _t: usize, d_mean: &[f64], d_log_std: &[f64], out: &mut [f64]) {
        out[ALPHA0] += d_mean[0] * x[0];
        out[LOG_SIGMA_U] += d_log_std[0];
    }

    fn proposal_features(&self, theta: &[f64], x: &[f64], y: &Observation) -> Vec<f64> {
        vec![self.drift(theta, x[0], y.time_index), y.values[0]]
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn features_depend_on_model(&self) -> bool {
        true
    }

    fn features_backward(&self, _theta: &[f64], x: &[f64], _y: &Observation, d_features: &[f64], out: &mut [f64]) {
        out[ALPHA0] += d_features[0] * x[0];
    }
}
