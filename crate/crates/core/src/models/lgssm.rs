//! Diagonal linear Gaussian state-space model.
//!
//! `x' = A x + S_u u`, `y = B x' + S_v v` with diagonal `A`, `B`, `S_u`, `S_v`.
//! When learnable, the model block is `(diag A, diag B)`; noise scales are fixed.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::model::{normal_log_density, Dynamics, Observation};
use crate::neural::GaussianStep;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct LgssmModel {
    dim: usize,
    /// Diagonal of A used when the model block is not learned.
    pub fixed_a: Vec<f64>,
    /// Diagonal of B used when the model block is not learned.
    pub fixed_b: Vec<f64>,
    pub process_std: Vec<f64>,
    pub observation_std: Vec<f64>,
    pub prior_mean: Vec<f64>,
    pub prior_std: Vec<f64>,
    learnable: bool,
}

impl LgssmModel {
    /// A model whose `(diag A, diag B)` form the learnable model block.
    pub fn learnable(process_std: Vec<f64>, observation_std: Vec<f64>) -> Self {
        let dim = process_std.len();
        assert_eq!(dim, observation_std.len(), "noise scales must share a dimension");
        Self {
            dim,
            fixed_a: vec![1.0; dim],
            fixed_b: vec![1.0; dim],
            process_std,
            observation_std,
            prior_mean: vec![0.0; dim],
            prior_std: vec![1.0; dim],
            learnable: true,
        }
    }

    /// A model with `A` and `B` frozen; the model block is empty.
    pub fn fixed(a: Vec<f64>, b: Vec<f64>, process_std: Vec<f64>, observation_std: Vec<f64>) -> Self {
        let mut m = Self::learnable(process_std, observation_std);
        assert_eq!(a.len(), m.dim);
        assert_eq!(b.len(), m.dim);
        m.fixed_a = a;
        m.fixed_b = b;
        m.learnable = false;
        m
    }

    pub fn with_prior(mut self, mean: Vec<f64>, std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), self.dim);
        assert_eq!(std.len(), self.dim);
        self.prior_mean = mean;
        self.prior_std = std;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_learnable(&self) -> bool {
        self.learnable
    }

    /// Diagonals of `A` and `B` under `theta`.
    pub fn coefficients<'a>(&'a self, theta: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        if self.learnable {
            theta.split_at(self.dim)
        } else {
            (&self.fixed_a, &self.fixed_b)
        }
    }

    fn diag_a(&self, theta: &[f64], k: usize) -> f64 {
        if self.learnable {
            theta[k]
        } else {
            self.fixed_a[k]
        }
    }

    fn diag_b(&self, theta: &[f64], k: usize) -> f64 {
        if self.learnable {
            theta[self.dim + k]
        } else {
            self.fixed_b[k]
        }
    }
}

impl Dynamics for LgssmModel {
    fn dim_x(&self) -> usize {
        self.dim
    }

    fn dim_y(&self) -> usize {
        self.dim
    }

    fn model_param_len(&self) -> usize {
        if self.learnable {
            2 * self.dim
        } else {
            0
        }
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.dim)
            .map(|k| {
                let z: f64 = rng.sample(StandardNormal);
                self.prior_mean[k] + self.prior_std[k] * z
            })
            .collect()
    }

    fn sample_transition(&self, theta: &[f64], x: &[f64], _t: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.dim)
            .map(|k| {
                let z: f64 = rng.sample(StandardNormal);
                self.diag_a(theta, k) * x[k] + self.process_std[k] * z
            })
            .collect()
    }

    fn sample_emission(&self, theta: &[f64], x: &[f64], _t: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.dim)
            .map(|k| {
                let z: f64 = rng.sample(StandardNormal);
                self.diag_b(theta, k) * x[k] + self.observation_std[k] * z
            })
            .collect()
    }

    fn log_transition(&self, theta: &[f64], x: &[f64], x_next: &[f64], _t: usize) -> f64 {
        (0..self.dim)
            .map(|k| {
                let s = self.process_std[k];
                normal_log_density(x_next[k], self.diag_a(theta, k) * x[k], s * s)
            })
            .sum()
    }

    fn log_transition_batch(&self, theta: &[f64], xs: &[f64], x_next: &[f64], _t: usize, out: &mut [f64]) {
        if self.dim == 1 {
            let a = self.diag_a(theta, 0);
            let s = self.process_std[0];
            let c = -0.5 * (2.0 * std::f64::consts::PI * s * s).ln();
            let inv = 0.5 / (s * s);
            let xn = x_next[0];
            for (o, x) in out.iter_mut().zip(xs) {
                let r = xn - a * x;
                *o = c - inv * r * r;
            }
        } else {
            for (o, x) in out.iter_mut().zip(xs.chunks_exact(self.dim)) {
                *o = self.log_transition(theta, x, x_next, 0);
            }
        }
    }

    fn log_emission(&self, theta: &[f64], x: &[f64], y: &Observation) -> f64 {
        (0..self.dim)
            .map(|k| {
                let s = self.observation_std[k];
                normal_log_density(y.values[k], self.diag_b(theta, k) * x[k], s * s)
            })
            .sum()
    }

    fn score_transition(&self, theta: &[f64], x: &[f64], x_next: &[f64], _t: usize, out: &mut [f64]) {
        if !self.learnable {
            return;
        }
        for k in 0..self.dim {
            let s2 = self.process_std[k].powi(2);
            out[k] += (x_next[k] - theta[k] * x[k]) * x[k] / s2;
        }
    }

    fn score_emission(&self, theta: &[f64], x: &[f64], y: &Observation, out: &mut [f64]) -> Result<()> {
        if !self.learnable {
            return Ok(());
        }
        for k in 0..self.dim {
            let s2 = self.observation_std[k].powi(2);
            let b = theta[self.dim + k];
            out[self.dim + k] += (y.values[k] - b * x[k]) * x[k] / s2;
        }
        Ok(())
    }

    fn grad_next_log_transition(&self, theta: &[f64], x: &[f64], x_next: &[f64], _t: usize, out: &mut [f64]) {
        for k in 0..self.dim {
            let s2 = self.process_std[k].powi(2);
            out[k] -= (x_next[k] - self.diag_a(theta, k) * x[k]) / s2;
        }
    }

    fn grad_state_log_emission(&self, theta: &[f64], x: &[f64], y: &Observation, out: &mut [f64]) -> Result<()> {
        for k in 0..self.dim {
            let s2 = self.observation_std[k].powi(2);
            let b = self.diag_b(theta, k);
            out[k] += b * (y.values[k] - b * x[k]) / s2;
        }
        Ok(())
    }

    fn bootstrap(&self, theta: &[f64], x: &[f64], _t: usize) -> GaussianStep {
        GaussianStep {
            mean: (0..self.dim).map(|k| self.diag_a(theta, k) * x[k]).collect(),
            log_std: self.process_std.iter().map(|s| s.ln()).collect(),
        }
    }

    fn bootstrap_backward(&self, _theta: &[f64], x: &[f64], _t: usize, d_mean: &[f64], _d_log_std: &[f64], out: &mut [f64]) {
        if !self.learnable {
            return;
        }
        for k in 0..self.dim {
            out[k] += d_mean[k] * x[k];
        }
    }

    fn proposal_features(&self, _theta: &[f64], x: &[f64], y: &Observation) -> Vec<f64> {
        let mut f = Vec::with_capacity(2 * self.dim);
        f.extend_from_slice(x);
        f.extend_from_slice(&y.values);
        f
    }

    fn feature_dim(&self) -> usize {
        2 * self.dim
    }

    fn locally_optimal(&self, theta: &[f64], x: &[f64], y: &Observation) -> Option<GaussianStep> {
        let mut mean = Vec::with_capacity(self.dim);
        let mut log_std = Vec::with_capacity(self.dim);
        for k in 0..self.dim {
            let (a, b) = (self.diag_a(theta, k), self.diag_b(theta, k));
            let (q, r) = (self.process_std[k].powi(2), self.observation_std[k].powi(2));
            let precision = 1.0 / q + b * b / r;
            let var = 1.0 / precision;
            mean.push(var * (a * x[k] / q + b * y.values[k] / r));
            log_std.push(-0.5 * precision.ln());
        }
        Some(GaussianStep { mean, log_std })
    }

    fn locally_optimal_backward(&self, theta: &[f64], x: &[f64], y: &Observation, d_mean: &[f64], d_log_std: &[f64], out: &mut [f64]) {
        if !self.learnable {
            return;
        }
        for k in 0..self.dim {
            let (a, b) = (theta[k], theta[self.dim + k]);
            let (q, r) = (self.process_std[k].powi(2), self.observation_std[k].powi(2));
            let precision = 1.0 / q + b * b / r;
            let var = 1.0 / precision;
            let info = a * x[k] / q + b * y.values[k] / r;
            // d var / d b = -var^2 * 2b/r
            let dvar_db = -var * var * 2.0 * b / r;
            let dmean_da = var * x[k] / q;
            let dmean_db = dvar_db * info + var * y.values[k] / r;
            let dlogstd_db = -b * var / r;
            out[k] += d_mean[k] * dmean_da;
            out[self.dim + k] += d_mean[k] * dmean_db + d_log_std[k] * dlogstd_db;
        }
    }
}
