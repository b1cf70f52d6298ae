//! Adam in the ascent direction, with separate step counters and rates for
//! the model and proposal blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Block, GradientEstimate, ParamLayout, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub model_rate: f64,
    pub proposal_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            model_rate: 1e-3,
            proposal_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    fn rate(&self, block: Block) -> f64 {
        match block {
            Block::Model => self.model_rate,
            Block::Proposal => self.proposal_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    /// Steps taken by the model and the proposal block.
    pub steps: [u64; 2],
}

fn block_slot(block: Block) -> usize {
    match block {
        Block::Model => 0,
        Block::Proposal => 1,
    }
}

impl OptimizerState {
    pub fn new(config: AdamConfig, layout: ParamLayout) -> Self {
        Self {
            config,
            first: vec![0.0; layout.len()],
            second: vec![0.0; layout.len()],
            steps: [0, 0],
        }
    }

    pub fn steps(&self, block: Block) -> u64 {
        self.steps[block_slot(block)]
    }
}

/// One bias-corrected Adam ascent step on every block `g` covers.
pub fn adam_step(state: &mut OptimizerState, g: &GradientEstimate, theta: &mut ParamVector) -> Result<()> {
    let layout = theta.layout();
    if g.layout() != layout || state.first.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            what: "optimizer state",
            expected: layout.len(),
            got: g.values().len(),
        });
    }
    let c = state.config;
    for block in [Block::Model, Block::Proposal] {
        if !g.blocks_covered().contains(block) || layout.block_len(block) == 0 {
            continue;
        }
        let slot = block_slot(block);
        state.steps[slot] += 1;
        let t = state.steps[slot] as i32;
        let correct1 = 1.0 - c.beta1.powi(t);
        let correct2 = 1.0 - c.beta2.powi(t);
        let rate = c.rate(block);
        let values = theta.values_mut();
        for k in layout.range(block) {
            let gk = g.values()[k];
            state.first[k] = c.beta1 * state.first[k] + (1.0 - c.beta1) * gk;
            state.second[k] = c.beta2 * state.second[k] + (1.0 - c.beta2) * gk * gk;
            let m_hat = state.first[k] / correct1;
            let v_hat = state.second[k] / correct2;
            values[k] += rate * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Blocks;

    #[test]
    fn zero_gradient_leaves_theta_and_decays_moments() {
        let layout = ParamLayout::new(2, 0).unwrap();
        let mut theta = ParamVector::new(vec![1.0, -2.0], layout).unwrap();
        let mut state = OptimizerState::new(AdamConfig::default(), layout);
        state.first = vec![0.5, 0.5];
        state.second = vec![0.25, 0.25];
        state.steps = [3, 0];
        adam_step(&mut state, &GradientEstimate::zeros(layout, Blocks::ALL), &mut theta).unwrap();
        // m_hat stays nonzero, so theta still drifts; with fresh moments it would not.
        assert_eq!(state.first, vec![0.45, 0.45]);
        assert!((state.second[0] - 0.24975).abs() < 1e-15);

        let mut fresh = OptimizerState::new(AdamConfig::default(), layout);
        let before = theta.clone();
        adam_step(&mut fresh, &GradientEstimate::zeros(layout, Blocks::ALL), &mut theta).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn first_step_moves_by_rate_times_sign() {
        let layout = ParamLayout::new(1, 0).unwrap();
        for g in [3.7, -0.02] {
            let mut theta = ParamVector::new(vec![0.0], layout).unwrap();
            let mut state = OptimizerState::new(AdamConfig::default(), layout);
            let est = GradientEstimate::new(vec![g], layout, Blocks::MODEL).unwrap();
            adam_step(&mut state, &est, &mut theta).unwrap();
            let expect = 1e-3 * g / (g.abs() + 1e-8);
            assert!((theta.values()[0] - expect).abs() < 1e-18);
        }
    }

    #[test]
    fn only_covered_block_moves() {
        let layout = ParamLayout::new(1, 2).unwrap();
        let mut theta = ParamVector::new(vec![0.0, 0.0, 0.0], layout).unwrap();
        let mut state = OptimizerState::new(AdamConfig::default(), layout);
        let est = GradientEstimate::new(vec![1.0, 1.0, 1.0], layout, Blocks::PROPOSAL).unwrap();
        adam_step(&mut state, &est, &mut theta).unwrap();
        assert_eq!(theta.values()[0], 0.0);
        assert!(theta.values()[1] > 0.0);
        assert_eq!(state.steps, [0, 1]);
    }

    #[test]
    fn identical_sequences_give_identical_trajectories() {
        let layout = ParamLayout::new(2, 1).unwrap();
        let run = || {
            let mut theta = ParamVector::new(vec![0.1, 0.2, 0.3], layout).unwrap();
            let mut state = OptimizerState::new(AdamConfig::default(), layout);
            for k in 0..50 {
                let x = (k as f64).sin();
                let est = GradientEstimate::new(vec![x, -x, x * x], layout, Blocks::ALL).unwrap();
                adam_step(&mut state, &est, &mut theta).unwrap();
            }
            theta
        };
        assert_eq!(run(), run());
    }
}
