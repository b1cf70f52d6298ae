//! Gradient estimators: the importance-weighted estimator with its
//! score-statistic correction, the variant without it, and the particle RML
//! increment.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::filtering::{log_sum_exp, ParticleCloud};
use crate::model::{Observation, Prepared, Ssm, Weighted};
use crate::params::{Blocks, GradientEstimate, ParamLayout, ParamVector};
use crate::smoothing::smoothed_expectation;

/// Summary of the shared check samples of one gradient call.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    /// `M - 1`.
    pub count: usize,
    /// `log sum_k w_k` over the checks (`-inf` when there are none).
    pub log_sum: f64,
    /// `sum_k grad w_k / sum_k w_k` (zero when there are none).
    pub mean_grad: Vec<f64>,
}

/// The two parts of an importance-weighted gradient estimate, each already
/// averaged over the hat samples.
#[derive(Debug, Clone, PartialEq)]
pub struct OsiwaeTerms {
    pub layout: ParamLayout,
    pub blocks: Blocks,
    /// `(1/N) sum_j Gamma_1(j)`, full length.
    pub importance: Vec<f64>,
    /// `(1/N) sum_j Gamma_2(j) (tau_j - mean tau)`, full length; `None` when
    /// the statistics cannot contribute (model block not covered or empty).
    pub score: Option<Vec<f64>>,
    pub checks: CheckSummary,
}

impl OsiwaeTerms {
    pub fn with_score(&self) -> Result<GradientEstimate> {
        let mut total = self.importance.clone();
        if let Some(score) = &self.score {
            total.iter_mut().zip(score).for_each(|(a, b)| *a += b);
        }
        GradientEstimate::new(total, self.layout, self.blocks)
    }

    pub fn without_score(&self) -> Result<GradientEstimate> {
        GradientEstimate::new(self.importance.clone(), self.layout, self.blocks)
    }
}

/// Draws the `M - 1` shared checks and `hats` hat samples and evaluates both
/// terms of the estimator restricted to `blocks`.
///
/// Draw order: for each check, a cloud index then `d_x` noise variates; then
/// the same for each hat.
#[allow(clippy::too_many_arguments)]
pub fn osiwae_terms<R: Rng + ?Sized>(
    cloud: &ParticleCloud,
    ssm: &Ssm,
    theta: &ParamVector,
    y: &Observation,
    m: usize,
    hats: usize,
    blocks: Blocks,
    rng: &mut R,
) -> Result<OsiwaeTerms> {
    if m == 0 || hats == 0 {
        return Err(Error::Config("need M >= 1 and at least one hat sample".into()));
    }
    check_dim("cloud state dimension", ssm.dim_x(), cloud.dim_x())?;
    check_dim("cloud statistics", theta.layout().model_len, cloud.stat_dim())?;
    let layout = theta.layout();
    let len = layout.len();
    let dx = ssm.dim_x();
    let probs = cloud.probabilities()?;
    let dist = WeightedIndex::new(&probs).map_err(|_| Error::DegenerateCloud { step: cloud.step() })?;
    let mut u = vec![0.0; dx];
    let mut grad = vec![0.0; len];
    // The covered blocks form one contiguous range of the layout.
    let active = match (blocks.model, blocks.proposal) {
        (true, true) => 0..len,
        (true, false) => layout.model_range(),
        (false, true) => layout.proposal_range(),
        (false, false) => 0..0,
    };
    let width = active.len();

    // The proposal step depends on the ancestor only, so each is run once.
    let mut prepared: Vec<Option<Prepared>> = (0..cloud.len()).map(|_| None).collect();
    let mut weigh = |i: usize, u: &[f64], grad: &mut [f64]| -> Result<Weighted> {
        let x = cloud.particle(i);
        let step = match &mut prepared[i] {
            Some(p) => p,
            slot => slot.insert(ssm.prepare(theta, x, y)?),
        };
        ssm.weigh_prepared(theta, x, y, step, u, blocks, Some(grad))
    };

    let draw = |rng: &mut R, u: &mut [f64]| -> usize {
        let i = dist.sample(rng);
        u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        i
    };

    // Shared checks: running log-sum of weights and weight-averaged gradient.
    let checks = m - 1;
    let mut check_lw = Vec::with_capacity(checks);
    let mut check_grads = Vec::with_capacity(checks * width);
    for _ in 0..checks {
        let i = draw(rng, &mut u);
        grad[active.clone()].fill(0.0);
        let w = weigh(i, &u, &mut grad)?;
        check_lw.push(w.log_weight);
        check_grads.extend_from_slice(&grad[active.clone()]);
    }
    let log_sum = log_sum_exp(&check_lw);
    let mut mean_grad = vec![0.0; len];
    if checks > 0 && log_sum > f64::NEG_INFINITY && width > 0 {
        for (lw, g) in check_lw.iter().zip(check_grads.chunks_exact(width)) {
            let p = (lw - log_sum).exp();
            mean_grad[active.clone()].iter_mut().zip(g).for_each(|(a, b)| *a += p * b);
        }
    }

    let p = cloud.stat_dim();
    let with_score = blocks.model && p > 0;
    let mut importance = vec![0.0; len];
    let mut hat_index = Vec::with_capacity(if with_score { hats } else { 0 });
    let mut gamma2 = Vec::with_capacity(hats);
    let ln_m = (m as f64).ln();
    for _ in 0..hats {
        let i = draw(rng, &mut u);
        grad[active.clone()].fill(0.0);
        let w = weigh(i, &u, &mut grad)?;
        let (g_active, imp_active) = (&grad[active.clone()], &mut importance[active.clone()]);
        // Gamma_1 = (w g + S_grad) / (w + S_w) = a g + (1 - a) mean_grad
        let share = if log_sum == f64::NEG_INFINITY {
            1.0
        } else {
            1.0 / (1.0 + (log_sum - w.log_weight).exp())
        };
        if checks == 0 || share == 1.0 {
            imp_active.iter_mut().zip(g_active).for_each(|(a, g)| *a += g);
        } else {
            imp_active
                .iter_mut()
                .zip(g_active)
                .zip(&mean_grad[active.clone()])
                .for_each(|((a, g), mg)| *a += share * g + (1.0 - share) * mg);
        }
        if with_score {
            hat_index.push(i);
            let log_total = log_add_exp(w.log_weight, log_sum);
            gamma2.push(m as f64 * (log_total - ln_m));
        }
    }
    let n = hats as f64;
    importance.iter_mut().for_each(|v| *v /= n);

    let score = if with_score {
        let mut mean_tau = vec![0.0; p];
        for (k, &i) in hat_index.iter().enumerate() {
            let c = (k + 1) as f64;
            mean_tau
                .iter_mut()
                .zip(cloud.statistic(i))
                .for_each(|(mt, t)| *mt += (t - *mt) / c);
        }
        let mut score = vec![0.0; len];
        let model = &mut score[layout.model_range()];
        for (&i, g2) in hat_index.iter().zip(&gamma2) {
            for ((s, t), mt) in model.iter_mut().zip(cloud.statistic(i)).zip(&mean_tau) {
                *s += g2 * (t - mt);
            }
        }
        score.iter_mut().for_each(|v| *v /= n);
        Some(score)
    } else {
        None
    };

    Ok(OsiwaeTerms {
        layout,
        blocks,
        importance,
        score,
        checks: CheckSummary {
            count: checks,
            log_sum,
            mean_grad,
        },
    })
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a == f64::NEG_INFINITY {
        return b;
    }
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// The importance-weighted gradient with `N` hat samples (`N` = cloud size).
#[allow(clippy::too_many_arguments)]
pub fn osiwae_gradient<R: Rng + ?Sized>(
    cloud: &ParticleCloud,
    ssm: &Ssm,
    theta: &ParamVector,
    y: &Observation,
    m: usize,
    blocks: Blocks,
    rng: &mut R,
) -> Result<GradientEstimate> {
    osiwae_terms(cloud, ssm, theta, y, m, cloud.len(), blocks, rng)?.with_score()
}

/// As [`osiwae_gradient`] with the score-statistic term dropped.
pub fn ovsmc_gradient<R: Rng + ?Sized>(
    cloud: &ParticleCloud,
    ssm: &Ssm,
    theta: &ParamVector,
    y: &Observation,
    m: usize,
    blocks: Blocks,
    rng: &mut R,
) -> Result<GradientEstimate> {
    osiwae_terms(cloud, ssm, theta, y, m, cloud.len(), blocks, rng)?.without_score()
}

/// Difference of smoothed score expectations between consecutive clouds, on
/// the model block.
pub fn rml_gradient(cloud: &ParticleCloud, next: &ParticleCloud, layout: ParamLayout) -> Result<GradientEstimate> {
    let before = smoothed_expectation(cloud)?;
    rml_increment(&before, next, layout)
}

/// [`rml_gradient`] against a cached smoothed expectation of the earlier cloud.
pub fn rml_increment(before: &[f64], next: &ParticleCloud, layout: ParamLayout) -> Result<GradientEstimate> {
    check_dim("smoothed score", layout.model_len, before.len())?;
    let after = smoothed_expectation(next)?;
    let mut values = vec![0.0; layout.len()];
    for ((v, a), b) in values[layout.model_range()].iter_mut().zip(&after).zip(before) {
        *v = a - b;
    }
    GradientEstimate::new(values, layout, Blocks::MODEL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Proposal;
    use crate::models::LgssmModel;
    use crate::neural::GaussianProposalHead;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(stat: Vec<f64>) -> (Ssm, ParamVector, ParticleCloud, Observation) {
        let ssm = Ssm::new(Box::new(LgssmModel::learnable(vec![0.9], vec![0.7])), Proposal::Bootstrap).unwrap();
        let theta = ParamVector::from_blocks(&[0.8, 1.2], &[]).unwrap();
        let cloud = ParticleCloud::new(vec![-0.5, 0.1, 0.4, 1.3], 1, vec![0.0, -0.3, 0.2, -1.0], stat, 2, 4).unwrap();
        (ssm, theta, cloud, Observation::new(vec![0.6], 5).unwrap())
    }

    #[test]
    fn single_sample_reduces_to_log_weight_gradient() {
        let (ssm, theta, cloud, y) = setup(vec![0.0; 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let terms = osiwae_terms(&cloud, &ssm, &theta, &y, 1, 5, Blocks::ALL, &mut rng).unwrap();
        // Replay the draws and average grad log w by hand.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dist = WeightedIndex::new(cloud.probabilities().unwrap()).unwrap();
        let mut expect = [0.0; 2];
        for _ in 0..5 {
            let i = dist.sample(&mut rng);
            let u: f64 = rng.sample(StandardNormal);
            let g = ssm
                .grad_log_weight(&theta, cloud.particle(i), &y, &crate::model::AuxNoise(vec![u]))
                .unwrap();
            expect[0] += g[0];
            expect[1] += g[1];
        }
        for k in 0..2 {
            assert!((terms.importance[k] - expect[k] / 5.0).abs() < 1e-14);
        }
        assert_eq!(terms.checks.count, 0);
    }

    #[test]
    fn constant_statistics_cancel() {
        let tau = [0.7, -2.0].repeat(4);
        let (ssm, theta, cloud, y) = setup(tau);
        let a = osiwae_gradient(&cloud, &ssm, &theta, &y, 6, Blocks::MODEL, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = ovsmc_gradient(&cloud, &ssm, &theta, &y, 6, Blocks::MODEL, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn difference_is_the_score_term() {
        let tau = vec![0.3, -0.1, 1.5, 0.2, -0.8, 0.9, 0.0, 2.0];
        let (ssm, theta, cloud, y) = setup(tau);
        let terms = osiwae_terms(&cloud, &ssm, &theta, &y, 4, 4, Blocks::MODEL, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let full = terms.with_score().unwrap();
        let dropped = terms.without_score().unwrap();
        let score = terms.score.as_ref().unwrap();
        for k in 0..2 {
            assert!((full.values()[k] - dropped.values()[k] - score[k]).abs() < 1e-12);
        }
        assert!(score.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn proposal_only_model_is_bit_identical() {
        let head = GaussianProposalHead::new(2, 1, 6).unwrap();
        let ssm = Ssm::new(
            Box::new(LgssmModel::fixed(vec![0.9], vec![1.0], vec![0.5], vec![0.5])),
            Proposal::Neural(head.clone()),
        )
        .unwrap();
        let theta = ParamVector::from_blocks(&[], &head.init_params(&mut ChaCha8Rng::seed_from_u64(0))).unwrap();
        let cloud = ParticleCloud::new(vec![0.1, -0.2, 0.5], 1, vec![0.0, -0.5, 0.1], vec![], 0, 1).unwrap();
        let y = Observation::new(vec![0.3], 2).unwrap();
        let a = osiwae_gradient(&cloud, &ssm, &theta, &y, 5, Blocks::PROPOSAL, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = ovsmc_gradient(&cloud, &ssm, &theta, &y, 5, Blocks::PROPOSAL, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let bits = |g: &GradientEstimate| g.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(a.values().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn rml_of_constant_statistics() {
        let layout = ParamLayout::new(2, 3).unwrap();
        let c0 = ParticleCloud::new(vec![0.0, 1.0], 1, vec![0.0, -1.0], [1.0, 2.0].repeat(2), 2, 0).unwrap();
        let c1 = ParticleCloud::new(vec![0.0, 1.0], 1, vec![0.4, -1.0], [1.5, -2.0].repeat(2), 2, 1).unwrap();
        let g = rml_gradient(&c0, &c1, layout).unwrap();
        assert_eq!(g.values(), &[0.5, -4.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.blocks_covered(), Blocks::MODEL);
    }
}
