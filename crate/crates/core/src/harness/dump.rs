//! Tabulating a learned proposal against the locally optimal kernel.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Observation;
use crate::models::build_model;
use crate::params::ParamVector;

use super::checkpoint::Checkpoint;

/// The probe used for the growth model: the move into step 18 from
/// `x = 0.1` after observing `y = 6`.
pub const GROWTH_PROBE: Probe = Probe { x: 0.1, y: 6.0, t: 18 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub x: f64,
    pub y: f64,
    /// Time index of `y`, i.e. of the destination state.
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRow {
    pub x_next: f64,
    pub learned_logdensity: f64,
    /// `log g(y | x') + log m(x' | x)` under the true model block.
    pub optimal_logdensity_unnormalized: f64,
    /// `log m(x' | x)` under the true model block.
    pub prior_logdensity: f64,
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Evaluates the proposal stored in `checkpoint` on `grid` at `probe`.
/// Only scalar latent states can be tabulated.
pub fn proposal_density_dump(checkpoint: &Checkpoint, probe: Probe, grid: &[f64]) -> Result<Vec<DensityRow>> {
    let config = checkpoint.config()?;
    let built = build_model(&config.model)?;
    let ssm = &built.ssm;
    if ssm.dim_x() != 1 || ssm.dim_y() != 1 {
        return Err(Error::Config("proposal dumps need scalar states and observations".into()));
    }
    let learned = &checkpoint.learner.theta;
    let truth = ParamVector::from_blocks(&built.truth, learned.proposal())?;
    let y = Observation::new(vec![probe.y], probe.t)?;
    let x = [probe.x];
    grid.iter()
        .map(|&xn| {
            let prior = ssm.log_transition(&truth, &x, &[xn], probe.t)?;
            Ok(DensityRow {
                x_next: xn,
                learned_logdensity: ssm.log_proposal(learned, &x, &y, &[xn])?,
                optimal_logdensity_unnormalized: prior + ssm.log_emission(&truth, &[xn], &y)?,
                prior_logdensity: prior,
            })
        })
        .collect()
}

pub fn write_dump<W: Write>(out: W, rows: &[DensityRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
