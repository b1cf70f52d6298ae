//! Range-bearing landmark SLAM.
//!
//! The robot position performs a planar Gaussian random walk. Each step it
//! measures, for every landmark `i`, the range `|l_i - x|` and the bearing
//! `atan2(l_i,2 - x_2, l_i,1 - x_1)`, both with additive Gaussian noise of
//! standard deviation `sigma_obs`. The model block holds the landmark
//! coordinates `(l_1,1, l_1,2, ..., l_L,1, l_L,2)`.
//!
//! Bearing residuals are wrapped into `(-pi, pi]` and given a plain Gaussian
//! density; with `sigma_obs` far below `pi` the wrapped mass is negligible.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Dynamics, Observation, HALF_LN_2PI};
use crate::neural::GaussianStep;

/// Robot-landmark distances below this are treated as coincident.
pub const MIN_RANGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SlamModel {
    pub landmarks: usize,
    pub motion_std: f64,
    pub observation_std: f64,
    pub prior_std: f64,
}

/// Wrapped difference `predicted - observed` in `(-pi, pi]`.
pub fn slam_angle_residual(predicted: f64, observed: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = (predicted - observed).rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    r
}

impl SlamModel {
    pub fn new(landmarks: usize, motion_var: f64, observation_var: f64) -> Self {
        assert!(landmarks >= 1, "at least one landmark is required");
        Self {
            landmarks,
            motion_std: motion_var.sqrt(),
            observation_std: observation_var.sqrt(),
            prior_std: 0.1,
        }
    }

    /// Noise-free `(range, bearing)` of landmark `l` seen from `x`.
    pub fn measure(l: &[f64], x: &[f64]) -> (f64, f64) {
        let (dx, dy) = (l[0] - x[0], l[1] - x[1]);
        ((dx * dx + dy * dy).sqrt(), dy.atan2(dx))
    }

    fn residuals(&self, theta: &[f64], x: &[f64], y: &[f64], i: usize) -> (f64, f64, f64, f64, f64) {
        let l = &theta[2 * i..2 * i + 2];
        let (dx, dy) = (l[0] - x[0], l[1] - x[1]);
        let range = (dx * dx + dy * dy).sqrt();
        let bearing = dy.atan2(dx);
        let e_range = range - y[2 * i];
        let e_bearing = slam_angle_residual(bearing, y[2 * i + 1]);
        (dx, dy, range, e_range, e_bearing)
    }

    /// Gradient of `log g(y | x)` over the landmark coordinates.
    pub fn landmark_score(&self, theta: &[f64], x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 2 * self.landmarks];
        self.accumulate_landmark_score(theta, x, y, &mut out)?;
        Ok(out)
    }

    fn accumulate_landmark_score(&self, theta: &[f64], x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        let s2 = self.observation_std.powi(2);
        for i in 0..self.landmarks {
            let (dx, dy, range, e_r, e_b) = self.residuals(theta, x, y, i);
            if range < MIN_RANGE {
                return Err(Error::Singular(format!("robot coincides with landmark {i}")));
            }
            let r2 = range * range;
            // d range / d l = (dx, dy)/r ; d bearing / d l = (-dy, dx)/r^2
            out[2 * i] -= (e_r * dx / range - e_b * dy / r2) / s2;
            out[2 * i + 1] -= (e_r * dy / range + e_b * dx / r2) / s2;
        }
        Ok(())
    }
}

impl Dynamics for SlamModel {
    fn dim_x(&self) -> usize {
        2
    }

    fn dim_y(&self) -> usize {
        2 * self.landmarks
    }

    fn model_param_len(&self) -> usize {
        2 * self.landmarks
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..2)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                self.prior_std * z
            })
            .collect()
    }

    fn sample_transition(&self, _theta: &[f64], x: &[f64], _t: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        x.iter()
            .map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                v + self.motion_std * z
            })
            .collect()
    }

    fn sample_emission(&self, theta: &[f64], x: &[f64], _t: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.landmarks);
        for i in 0..self.landmarks {
            let (range, bearing) = Self::measure(&theta[2 * i..2 * i + 2], x);
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            y.push(range + self.observation_std * z1);
            y.push(slam_angle_residual(bearing + self.observation_std * z2, 0.0));
        }
        y
    }

    fn log_transition(&self, _theta: &[f64], x: &[f64], x_next: &[f64], _t: usize) -> f64 {
        let s = self.motion_std;
        x.iter()
            .zip(x_next)
            .map(|(a, b)| {
                let z = (b - a) / s;
                -0.5 * z * z - s.ln() - HALF_LN_2PI
            })
            .sum()
    }

    fn log_emission(&self, theta: &[f64], x: &[f64], y: &Observation) -> f64 {
        let s = self.observation_std;
        let norm = -2.0 * (s.ln() + HALF_LN_2PI);
        (0..self.landmarks)
            .map(|i| {
                let (_, _, _, e_r, e_b) = self.residuals(theta, x, &y.values, i);
                norm - 0.5 * (e_r * e_r + e_b * e_b) / (s * s)
            })
            .sum()
    }

    fn score_transition(&self, _theta: &[f64], _x: &[f64], _x_next: &[f64], _t: usize, _out: &mut [f64]) {}

    fn score_emission(&self, theta: &[f64], x: &[f64], y: &Observation, out: &mut [f64]) -> Result<()> {
        self.accumulate_landmark_score(theta, x, &y.values, out)
    }

    fn grad_next_log_transition(&self, _theta: &[f64], x: &[f64], x_next: &[f64], _t: usize, out: &mut [f64]) {
        let s2 = self.motion_std.powi(2);
        for k in 0..2 {
            out[k] -= (x_next[k] - x[k]) / s2;
        }
    }

    fn grad_state_log_emission(&self, theta: &[f64], x: &[f64], y: &Observation, out: &mut [f64]) -> Result<()> {
        let s2 = self.observation_std.powi(2);
        for i in 0..self.landmarks {
            let (dx, dy, range, e_r, e_b) = self.residuals(theta, x, &y.values, i);
            if range < MIN_RANGE {
                return Err(Error::Singular(format!("robot coincides with landmark {i}")));
            }
            let r2 = range * range;
            // d range / d x = -(dx, dy)/r ; d bearing / d x = (dy, -dx)/r^2
            out[0] -= (-e_r * dx / range + e_b * dy / r2) / s2;
            out[1] -= (-e_r * dy / range - e_b * dx / r2) / s2;
        }
        Ok(())
    }

    fn bootstrap(&self, _theta: &[f64], x: &[f64], _t: usize) -> GaussianStep {
        GaussianStep {
            mean: x.to_vec(),
            log_std: vec![self.motion_std.ln(); 2],
        }
    }

    fn bootstrap_backward(&self, _theta: &[f64], _x: &[f64], _t: usize, _d_mean: &[f64], _d_log_std: &[f64], _out: &mut [f64]) {}

    fn proposal_features(&self, _theta: &[f64], x: &[f64], y: &Observation) -> Vec<f64> {
        let mut f = Vec::with_capacity(2 + y.values.len());
        f.extend_from_slice(x);
        f.extend_from_slice(&y.values);
        f
    }

    fn feature_dim(&self) -> usize {
        2 + 2 * self.landmarks
    }
}
