//! Weighted particle clouds: normalisation, effective sample size,
//! multinomial resampling and the propagate-and-reweight step.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::model::{Observation, Ssm};
use crate::params::{Blocks, ParamVector};
use crate::rng::{Role, Streams};

/// `N` particles with log weights and per-particle score statistics.
///
/// Particles and statistics are stored row-major. Statistics span the model
/// block only: proposal-block entries of every statistic are identically zero
/// and are not materialised.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    particles: Vec<f64>,
    log_weights: Vec<f64>,
    statistics: Vec<f64>,
    dim_x: usize,
    stat_dim: usize,
    step: usize,
}

impl ParticleCloud {
    pub fn new(
        particles: Vec<f64>,
        dim_x: usize,
        log_weights: Vec<f64>,
        statistics: Vec<f64>,
        stat_dim: usize,
        step: usize,
    ) -> Result<Self> {
        let n = log_weights.len();
        if n < 2 {
            return Err(Error::Config(format!("a particle cloud needs at least 2 particles, got {n}")));
        }
        check_dim("cloud particles", n * dim_x, particles.len())?;
        check_dim("cloud statistics", n * stat_dim, statistics.len())?;
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::NonFinite("cloud log weights"));
        }
        if log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(Error::DegenerateCloud { step });
        }
        Ok(Self {
            particles,
            log_weights,
            statistics,
            dim_x,
            stat_dim,
            step,
        })
    }

    /// Draws `n` particles from the initial law and weights them by
    /// `g(y_0 | x)`; statistics start at `grad log g(y_0 | x)`.
    pub fn initialize(ssm: &Ssm, theta: &ParamVector, y0: &Observation, n: usize, streams: &Streams) -> Result<Self> {
        let dx = ssm.dim_x();
        let stat_dim = theta.layout().model_len;
        let dyns = ssm.dynamics();
        let mut particles = Vec::with_capacity(n * dx);
        let mut log_weights = Vec::with_capacity(n);
        let mut statistics = vec![0.0; n * stat_dim];
        for i in 0..n {
            let mut rng = streams.indexed(y0.time_index as u64, Role::Initialize, i as u64);
            let x = ssm.sample_initial(&mut rng);
            log_weights.push(ssm.log_emission(theta, &x, y0)?);
            if stat_dim > 0 {
                dyns.score_emission(theta.model(), &x, y0, &mut statistics[i * stat_dim..(i + 1) * stat_dim])?;
            }
            particles.extend_from_slice(&x);
        }
        Self::new(particles, dx, log_weights, statistics, stat_dim, y0.time_index)
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn stat_dim(&self) -> usize {
        self.stat_dim
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim_x..(i + 1) * self.dim_x]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn statistics(&self) -> &[f64] {
        &self.statistics
    }

    pub fn statistic(&self, i: usize) -> &[f64] {
        &self.statistics[i * self.stat_dim..(i + 1) * self.stat_dim]
    }

    pub fn probabilities(&self) -> Result<Vec<f64>> {
        normalize(&self.log_weights).map_err(|_| Error::DegenerateCloud { step: self.step })
    }

    pub fn ess(&self) -> Result<f64> {
        ess(&self.log_weights).map_err(|_| Error::DegenerateCloud { step: self.step })
    }

    /// Weighted mean of the particles.
    pub fn mean(&self) -> Result<Vec<f64>> {
        let p = self.probabilities()?;
        let mut m = vec![0.0; self.dim_x];
        for (pi, x) in p.iter().zip(self.particles.chunks_exact(self.dim_x)) {
            for (mk, xk) in m.iter_mut().zip(x) {
                *mk += pi * xk;
            }
        }
        Ok(m)
    }
}

/// Normalised probabilities from log weights via log-sum-exp.
pub fn normalize(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::ZeroMass("log weights"));
    }
    let mut p: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// `log sum exp` of the entries; `-inf` for an empty or all-zero input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Effective sample size `1 / sum p_i^2`.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let p = normalize(log_weights)?;
    Ok(1.0 / p.iter().map(|v| v * v).sum::<f64>())
}

/// `count` i.i.d. categorical draws with the normalised weights.
pub fn multinomial_resample<R: Rng + ?Sized>(cloud: &ParticleCloud, rng: &mut R, count: usize) -> Result<Vec<usize>> {
    let p = cloud.probabilities()?;
    categorical(&p, rng, count)
}

pub(crate) fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R, count: usize) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(p).map_err(|_| Error::ZeroMass("categorical probabilities"))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}

/// Output of one propagate-and-reweight step.
#[derive(Debug, Clone, PartialEq)]
pub struct Mutation {
    pub particles: Vec<f64>,
    pub ancestors: Vec<usize>,
    pub log_weights: Vec<f64>,
    pub resampled: bool,
}

/// Moves every particle through the proposal and reweights it.
///
/// With `resample` the ancestors are multinomial draws and the old weights
/// are discarded; otherwise particle `i` descends from particle `i`.
/// Randomness for step `t = y.time_index` comes from per-particle substreams.
pub fn mutate_and_reweight(
    cloud: &ParticleCloud,
    ssm: &Ssm,
    theta: &ParamVector,
    y: &Observation,
    resample: bool,
    streams: &Streams,
) -> Result<Mutation> {
    check_dim("cloud state dimension", ssm.dim_x(), cloud.dim_x)?;
    let n = cloud.len();
    let step = y.time_index as u64;
    let ancestors = if resample {
        multinomial_resample(cloud, &mut streams.at(step, Role::Resample), n)?
    } else {
        (0..n).collect()
    };
    let dx = cloud.dim_x;
    let mut particles = Vec::with_capacity(n * dx);
    let mut log_weights = Vec::with_capacity(n);
    let mut u = vec![0.0; dx];
    for (i, &a) in ancestors.iter().enumerate() {
        let mut rng = streams.indexed(step, Role::Mutate, i as u64);
        u.iter_mut().for_each(|v| *v = rng.sample(rand_distr::StandardNormal));
        let moved = ssm.weigh(theta, cloud.particle(a), y, &u, Blocks::NONE, None)?;
        particles.extend_from_slice(&moved.next);
        let carried = if resample { 0.0 } else { cloud.log_weights[a] };
        log_weights.push(carried + moved.log_weight);
    }
    if log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
        return Err(Error::DegenerateCloud { step: y.time_index });
    }
    Ok(Mutation {
        particles,
        ancestors,
        log_weights,
        resampled: resample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Proposal;
    use crate::models::LgssmModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(log_weights: Vec<f64>) -> ParticleCloud {
        let n = log_weights.len();
        let particles = (0..n).map(|i| i as f64).collect();
        ParticleCloud::new(particles, 1, log_weights, vec![], 0, 0).unwrap()
    }

    fn lgssm(proposal: Proposal) -> Ssm {
        Ssm::new(
            Box::new(LgssmModel::learnable(vec![1.0], vec![1.0])),
            proposal,
        )
        .unwrap()
    }

    #[test]
    fn equal_weights_normalise_to_uniform() {
        assert_eq!(normalize(&[0.3; 4]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn softmax_by_hand() {
        let p = normalize(&[0.0, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_particle() {
        assert_eq!(normalize(&[0.0, f64::NEG_INFINITY]).unwrap(), vec![1.0, 0.0]);
        assert!(normalize(&[f64::NEG_INFINITY; 3]).is_err());
    }

    #[test]
    fn ess_examples() {
        assert!((ess(&[0.0; 7]).unwrap() - 7.0).abs() < 1e-12);
        assert_eq!(ess(&[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]).unwrap(), 1.0);
        let half = 0.5f64.ln();
        let p = [half, half, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!((ess(&p).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cloud_rejects_degenerate_weights() {
        assert!(matches!(
            ParticleCloud::new(vec![0.0, 1.0], 1, vec![f64::NEG_INFINITY; 2], vec![], 0, 3),
            Err(Error::DegenerateCloud { step: 3 })
        ));
        assert!(ParticleCloud::new(vec![0.0], 1, vec![0.0], vec![], 0, 0).is_err());
    }

    #[test]
    fn one_hot_resampling() {
        let c = cloud(vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(multinomial_resample(&c, &mut rng, 50).unwrap().iter().all(|&i| i == 2));
    }

    #[test]
    fn uniform_resampling_frequencies() {
        let n = 5;
        let c = cloud(vec![0.0; n]);
        let draws = 100_000;
        let idx = multinomial_resample(&c, &mut ChaCha8Rng::seed_from_u64(2), draws).unwrap();
        let p = 1.0 / n as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for k in 0..n {
            let freq = idx.iter().filter(|&&i| i == k).count() as f64 / draws as f64;
            assert!((freq - p).abs() < 3.0 * se, "index {k}: {freq}");
        }
    }

    #[test]
    fn resampling_is_reproducible() {
        let c = cloud(vec![0.1, -0.4, 2.0, 0.0]);
        let a = multinomial_resample(&c, &mut ChaCha8Rng::seed_from_u64(7), 100).unwrap();
        let b = multinomial_resample(&c, &mut ChaCha8Rng::seed_from_u64(7), 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resampling_preserves_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50;
        let lw: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = ParticleCloud::new(xs.clone(), 1, lw, vec![], 0, 0).unwrap();
        let p = c.probabilities().unwrap();
        let target: f64 = p.iter().zip(&xs).map(|(p, x)| p * x).sum();
        let reps = 1000;
        let means: Vec<f64> = (0..reps)
            .map(|_| {
                let idx = multinomial_resample(&c, &mut rng, n).unwrap();
                idx.iter().map(|&i| xs[i]).sum::<f64>() / n as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / reps as f64;
        let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((m - target).abs() < 4.0 * (var / reps as f64).sqrt());
    }

    #[test]
    fn no_resampling_keeps_identities() {
        let ssm = lgssm(Proposal::Bootstrap);
        let theta = ParamVector::from_blocks(&[0.9, 1.0], &[]).unwrap();
        let c = ParticleCloud::new(vec![0.0, 1.0, -2.0], 1, vec![0.0, -1.0, -0.5], vec![0.0; 6], 2, 0).unwrap();
        let y = Observation::new(vec![0.4], 1).unwrap();
        let m = mutate_and_reweight(&c, &ssm, &theta, &y, false, &Streams::new(3)).unwrap();
        assert_eq!(m.ancestors, vec![0, 1, 2]);
        for i in 0..3 {
            let lg = ssm.log_emission(&theta, &m.particles[i..i + 1], &y).unwrap();
            assert_eq!(m.log_weights[i], c.log_weights()[i] + lg);
        }
    }

    #[test]
    fn bootstrap_weight_is_emission_after_resampling() {
        let ssm = lgssm(Proposal::Bootstrap);
        let theta = ParamVector::from_blocks(&[0.9, 1.0], &[]).unwrap();
        let c = ParticleCloud::new(vec![0.0, 1.0, -2.0], 1, vec![0.0, -1.0, -0.5], vec![0.0; 6], 2, 0).unwrap();
        let y = Observation::new(vec![0.4], 1).unwrap();
        let m = mutate_and_reweight(&c, &ssm, &theta, &y, true, &Streams::new(3)).unwrap();
        for i in 0..3 {
            let lg = ssm.log_emission(&theta, &m.particles[i..i + 1], &y).unwrap();
            assert_eq!(m.log_weights[i], lg);
        }
    }

    #[test]
    fn optimal_proposal_weights_are_equal_after_resampling() {
        let ssm = lgssm(Proposal::LocallyOptimal);
        let theta = ParamVector::from_blocks(&[0.7, 1.2], &[]).unwrap();
        let c = ParticleCloud::new(vec![0.5; 6], 1, vec![0.0, -1.0, -0.5, 0.2, 0.0, -3.0], vec![0.0; 12], 2, 0).unwrap();
        let y = Observation::new(vec![-0.3], 1).unwrap();
        let m = mutate_and_reweight(&c, &ssm, &theta, &y, true, &Streams::new(8)).unwrap();
        let first = m.log_weights[0];
        assert!(m.log_weights.iter().all(|w| (w - first).abs() < 1e-12));
    }
}
