//! Online propagation of the score statistics alongside the particle filter.
//!
//! Each step moves the cloud with [`mutate_and_reweight`] and updates every
//! particle's statistic `tau` from its ancestor's. When both resampling and
//! backward sampling are scheduled, a second ancestor `J` is drawn from the
//! backward kernel and the two contributions are averaged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::filtering::{mutate_and_reweight, normalize, ParticleCloud};
use crate::model::{Observation, Ssm};
use crate::params::ParamVector;
use crate::rng::{Role, Streams};

/// When a schedule fires at a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Always,
    Never,
    /// Fires when the effective sample size drops below this fraction of `N`.
    EssThreshold(f64),
    /// Fires at destination steps divisible by `k`.
    EveryK(usize),
}

impl Rule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Rule::EssThreshold(f) if !(f > 0.0 && f <= 1.0) => {
                Err(Error::Config(format!("ESS threshold must lie in (0, 1], got {f}")))
            }
            Rule::EveryK(0) => Err(Error::Config("every_k needs k >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Whether the rule fires for the move into step `t` given the current
    /// ESS as a fraction of `N`.
    pub fn fires(&self, t: usize, ess_fraction: f64) -> bool {
        match *self {
            Rule::Always => true,
            Rule::Never => false,
            Rule::EssThreshold(f) => ess_fraction < f,
            Rule::EveryK(k) => t % k == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSchedule {
    pub resample: Rule,
    pub backward: Rule,
}

impl Default for SmoothingSchedule {
    fn default() -> Self {
        Self {
            resample: Rule::EssThreshold(0.5),
            backward: Rule::EveryK(5),
        }
    }
}

impl SmoothingSchedule {
    pub fn validate(&self) -> Result<()> {
        self.resample.validate()?;
        self.backward.validate()
    }
}

/// Backward-kernel probabilities `p_j ∝ w_j m(x_next | xi_j)` for the move
/// into step `t`.
pub fn backward_probabilities(
    cloud: &ParticleCloud,
    ssm: &Ssm,
    theta: &ParamVector,
    x_next: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    check_dim("latent state", ssm.dim_x(), x_next.len())?;
    let mut logp = vec![0.0; cloud.len()];
    backward_log_masses(cloud, ssm, theta, x_next, t, &mut logp);
    normalize(&logp).map_err(|_| Error::DegenerateCloud { step: t })
}

fn backward_log_masses(cloud: &ParticleCloud, ssm: &Ssm, theta: &ParamVector, x_next: &[f64], t: usize, out: &mut [f64]) {
    ssm.dynamics()
        .log_transition_batch(theta.model(), cloud.particles(), x_next, t, out);
    for (o, w) in out.iter_mut().zip(cloud.log_weights()) {
        *o += w;
    }
}

/// One categorical draw with probabilities `∝ exp(log_mass)`; the buffer is
/// overwritten with unnormalised masses. `None` when all masses vanish.
pub(crate) fn draw_from_log_masses<R: Rng + ?Sized>(log_mass: &mut [f64], rng: &mut R) -> Option<usize> {
    let max = log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut total = 0.0;
    for v in log_mass.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let mut target = rng.gen::<f64>() * total;
    for (j, &v) in log_mass.iter().enumerate() {
        if target < v {
            return Some(j);
        }
        target -= v;
    }
    log_mass.iter().rposition(|&v| v > 0.0)
}

/// The statistic update for one particle: forward only when `backward` is
/// `None`, otherwise the two-draw average
/// `(tau_I + s_m(I) + tau_J + s_m(J)) / 2 + s_g`.
pub fn update_statistic(
    tau_i: &[f64],
    s_m_i: &[f64],
    backward: Option<(&[f64], &[f64])>,
    s_g: &[f64],
    out: &mut [f64],
) {
    match backward {
        None => {
            for k in 0..out.len() {
                out[k] = tau_i[k] + s_m_i[k] + s_g[k];
            }
        }
        Some((tau_j, s_m_j)) => {
            for k in 0..out.len() {
                out[k] = 0.5 * (tau_i[k] + s_m_i[k] + tau_j[k] + s_m_j[k]) + s_g[k];
            }
        }
    }
}

/// Advances the cloud and its statistics to the step of `y`.
pub fn adasmooth_step(
    cloud: &ParticleCloud,
    ssm: &Ssm,
    theta: &ParamVector,
    y: &Observation,
    schedule: &SmoothingSchedule,
    streams: &Streams,
) -> Result<ParticleCloud> {
    let n = cloud.len();
    let t = y.time_index;
    let ess_fraction = cloud.ess()? / n as f64;
    let resample = schedule.resample.fires(t, ess_fraction);
    let backward = resample && schedule.backward.fires(t, ess_fraction);
    let moved = mutate_and_reweight(cloud, ssm, theta, y, resample, streams)?;

    let p = cloud.stat_dim();
    let mut statistics = vec![0.0; n * p];
    if p > 0 {
        let dyns = ssm.dynamics();
        let model = theta.model();
        let dx = cloud.dim_x();
        let mut s_m_i = vec![0.0; p];
        let mut s_m_j = vec![0.0; p];
        let mut s_g = vec![0.0; p];
        let mut log_mass = vec![0.0; if backward { n } else { 0 }];
        for (i, &a) in moved.ancestors.iter().enumerate() {
            let x_next = &moved.particles[i * dx..(i + 1) * dx];
            s_m_i.fill(0.0);
            s_g.fill(0.0);
            dyns.score_transition(model, cloud.particle(a), x_next, t, &mut s_m_i);
            dyns.score_emission(model, x_next, y, &mut s_g)?;
            let out = &mut statistics[i * p..(i + 1) * p];
            if backward {
                backward_log_masses(cloud, ssm, theta, x_next, t, &mut log_mass);
                let mut rng = streams.indexed(t as u64, Role::Backward, i as u64);
                let j = draw_from_log_masses(&mut log_mass, &mut rng).ok_or(Error::DegenerateCloud { step: t })?;
                s_m_j.fill(0.0);
                dyns.score_transition(model, cloud.particle(j), x_next, t, &mut s_m_j);
                update_statistic(cloud.statistic(a), &s_m_i, Some((cloud.statistic(j), &s_m_j)), &s_g, out);
            } else {
                update_statistic(cloud.statistic(a), &s_m_i, None, &s_g, out);
            }
        }
    }
    ParticleCloud::new(moved.particles, cloud.dim_x(), moved.log_weights, statistics, p, t)
}

/// `sum_i p_i tau_i` for the normalised weights `p`.
pub fn smoothed_expectation(cloud: &ParticleCloud) -> Result<Vec<f64>> {
    let probs = cloud.probabilities()?;
    let p = cloud.stat_dim();
    let mut out = vec![0.0; p];
    for (i, w) in probs.iter().enumerate() {
        for (o, tau) in out.iter_mut().zip(cloud.statistic(i)) {
            *o += w * tau;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normal_log_density, Proposal};
    use crate::models::LgssmModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_mass_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut buf = vec![f64::NEG_INFINITY; 4];
        assert_eq!(draw_from_log_masses(&mut buf, &mut rng), None);
        for _ in 0..50 {
            let mut buf = vec![f64::NEG_INFINITY, 700.0, f64::NEG_INFINITY];
            assert_eq!(draw_from_log_masses(&mut buf, &mut rng), Some(1));
        }
        let target = [0.1, 0.2, 0.3, 0.4];
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            let mut buf: Vec<f64> = target.iter().map(|p: &f64| p.ln() - 5.0).collect();
            counts[draw_from_log_masses(&mut buf, &mut rng).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(target) {
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((*c as f64 / draws as f64 - p).abs() < 4.0 * se);
        }
    }

    fn lgssm_1d() -> Ssm {
        Ssm::new(Box::new(LgssmModel::learnable(vec![0.8], vec![0.6])), Proposal::Bootstrap).unwrap()
    }

    fn theta() -> ParamVector {
        ParamVector::from_blocks(&[0.7, 1.1], &[]).unwrap()
    }

    #[test]
    fn rules() {
        assert!(Rule::EveryK(5).fires(10, 1.0));
        assert!(!Rule::EveryK(5).fires(11, 0.0));
        assert!(Rule::EssThreshold(0.5).fires(3, 0.49));
        assert!(!Rule::EssThreshold(0.5).fires(3, 0.5));
        assert!(Rule::EssThreshold(0.0).validate().is_err());
        assert!(Rule::EveryK(0).validate().is_err());
    }

    #[test]
    fn uniform_weights_and_flat_kernel_give_uniform_backward() {
        let ssm = Ssm::new(Box::new(LgssmModel::learnable(vec![1.0], vec![1.0])), Proposal::Bootstrap).unwrap();
        let th = ParamVector::from_blocks(&[0.0, 1.0], &[]).unwrap();
        let c = ParticleCloud::new(vec![0.3, -1.0, 2.0, 5.0], 1, vec![0.0; 4], vec![0.0; 8], 2, 0).unwrap();
        let p = backward_probabilities(&c, &ssm, &th, &[0.4], 1).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn one_hot_weights_give_one_hot_backward() {
        let ninf = f64::NEG_INFINITY;
        let c = ParticleCloud::new(vec![0.3, -1.0, 2.0], 1, vec![ninf, -4.0, ninf], vec![0.0; 6], 2, 0).unwrap();
        let p = backward_probabilities(&c, &lgssm_1d(), &theta(), &[10.0], 1).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn backward_matches_brute_force() {
        let xs = [0.3, -1.0, 2.0];
        let lw = [-0.2, 0.5, -1.3];
        let c = ParticleCloud::new(xs.to_vec(), 1, lw.to_vec(), vec![0.0; 6], 2, 0).unwrap();
        let x_next = 0.9;
        let p = backward_probabilities(&c, &lgssm_1d(), &theta(), &[x_next], 1).unwrap();
        let raw: Vec<f64> = (0..3)
            .map(|j| lw[j].exp() * normal_log_density(x_next, 0.7 * xs[j], 0.64).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        for j in 0..3 {
            assert!((p[j] - raw[j] / total).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forced_self_pairing_collapses_to_forward() {
        let tau = [0.3, -1.7];
        let sm = [0.11, 2.5];
        let sg = [-0.4, 0.9];
        let mut fwd = [0.0; 2];
        let mut bwd = [0.0; 2];
        update_statistic(&tau, &sm, None, &sg, &mut fwd);
        update_statistic(&tau, &sm, Some((&tau, &sm)), &sg, &mut bwd);
        assert_eq!(fwd, bwd);
    }

    #[test]
    fn statistics_follow_the_genealogy() {
        let ssm = lgssm_1d();
        let th = theta();
        let streams = Streams::new(21);
        let schedule = SmoothingSchedule {
            resample: Rule::Always,
            backward: Rule::Never,
        };
        let ys: Vec<Observation> = [0.2, -0.5, 1.1, 0.4]
            .iter()
            .enumerate()
            .map(|(t, v)| Observation::new(vec![*v], t).unwrap())
            .collect();
        let mut cloud = ParticleCloud::initialize(&ssm, &th, &ys[0], 2, &streams).unwrap();
        // Hand-traced path sums: paths[i] lists the states on particle i's lineage.
        let mut paths: Vec<Vec<f64>> = (0..2).map(|i| vec![cloud.particle(i)[0]]).collect();
        for y in &ys[1..] {
            let moved = mutate_and_reweight(&cloud, &ssm, &th, y, true, &streams).unwrap();
            let next = adasmooth_step(&cloud, &ssm, &th, y, &schedule, &streams).unwrap();
            assert_eq!(next.particles(), moved.particles.as_slice());
            paths = moved
                .ancestors
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let mut p = paths[a].clone();
                    p.push(moved.particles[i]);
                    p
                })
                .collect();
            cloud = next;
        }
        for (i, path) in paths.iter().enumerate() {
            let mut expect = [0.0; 2];
            for (t, x) in path.iter().enumerate() {
                let yv = ys[t].values[0];
                expect[1] += (yv - 1.1 * x) * x / 0.36;
                if t > 0 {
                    let prev = path[t - 1];
                    expect[0] += (x - 0.7 * prev) * prev / 0.64;
                }
            }
            let got = cloud.statistic(i);
            for k in 0..2 {
                assert!((got[k] - expect[k]).abs() < 1e-12 * (1.0 + expect[k].abs()), "{got:?} vs {expect:?}");
            }
        }
    }

    #[test]
    fn proposal_only_model_carries_no_statistics() {
        use crate::neural::GaussianProposalHead;
        let head = GaussianProposalHead::new(2, 1, 8).unwrap();
        let ssm = Ssm::new(
            Box::new(LgssmModel::fixed(vec![0.9], vec![1.0], vec![1.0], vec![1.0])),
            Proposal::Neural(head.clone()),
        )
        .unwrap();
        let th = ParamVector::from_blocks(&[], &head.init_params(&mut ChaCha8Rng::seed_from_u64(1))).unwrap();
        let streams = Streams::new(4);
        let mut cloud = ParticleCloud::initialize(&ssm, &th, &Observation::new(vec![0.1], 0).unwrap(), 8, &streams).unwrap();
        for t in 1..20 {
            let y = Observation::new(vec![0.3 * t as f64], t).unwrap();
            cloud = adasmooth_step(&cloud, &ssm, &th, &y, &SmoothingSchedule::default(), &streams).unwrap();
            assert_eq!(cloud.stat_dim(), 0);
            assert!(smoothed_expectation(&cloud).unwrap().is_empty());
        }
    }

    #[test]
    fn smoothed_expectation_examples() {
        let c = ParticleCloud::new(vec![0.0, 1.0, 2.0], 1, vec![0.0, -1.0, 0.4], [2.0, -3.0].repeat(3), 2, 0).unwrap();
        let e = smoothed_expectation(&c).unwrap();
        assert!((e[0] - 2.0).abs() < 1e-15 && (e[1] + 3.0).abs() < 1e-15);
        let ninf = f64::NEG_INFINITY;
        let c = ParticleCloud::new(vec![0.0, 1.0, 2.0], 1, vec![ninf, 0.0, ninf], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 0).unwrap();
        assert_eq!(smoothed_expectation(&c).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn smoothed_expectation_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 17;
        let lw: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let tau: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let c = ParticleCloud::new(vec![0.0; n], 1, lw.clone(), tau.clone(), 3, 0).unwrap();
        let p = normalize(&lw).unwrap();
        let mut naive = [0.0; 3];
        for i in 0..n {
            for k in 0..3 {
                naive[k] += p[i] * tau[3 * i + k];
            }
        }
        assert_eq!(smoothed_expectation(&c).unwrap(), naive.to_vec());
    }
}
