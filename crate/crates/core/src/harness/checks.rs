//! The acceptance criteria as runnable checks, shared by the `check`
//! subcommand and the acceptance test target.
//!
//! Each check returns a [`CheckOutcome`] carrying the measured quantities;
//! thresholds are fixed constants in this module.

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::filtering::ParticleCloud;
use crate::learning::{osiwae_gradient, osiwae_terms, ovsmc_gradient, Learner, LearnerConfig, LearnerKind};
use crate::model::{Dynamics, Observation, Proposal, Ssm};
use crate::models::{build_model, GrowthConfig, LgssmConfig, LgssmModel, ModelConfig, ProposalKind, SlamModel};
use crate::neural::Mlp;
use crate::oracle::{
    central_difference, exact_likfunc_lgssm, grid_modes, kalman_filter, kalman_score, mc_colbo, FilterLaw,
    GaussianBelief, LgssmParams,
};
use crate::params::{Blocks, ParamVector};
use crate::rng::{Role, Streams};
use crate::smoothing::{adasmooth_step, smoothed_expectation, Rule, SmoothingSchedule};

use super::config::{ExperimentConfig, OutputConfig};
use super::dump::{linspace, GROWTH_PROBE};
use super::metrics::mean_absolute_error;
use super::run::{run_experiment, RunOptions, CHECKPOINT_FILE, METRICS_FILE};
use super::simulate::{simulate, Trace};

pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const GRADIENT_INPUTS: usize = 100;
pub const MC_RATE: f64 = -0.5;
pub const MC_RATE_BAND: f64 = 0.2;
pub const BIAS_RATE: f64 = -1.0;
pub const BIAS_RATE_BAND: f64 = 0.25;
pub const SCORE_TOLERANCE: f64 = 0.05;
pub const MAE_REDUCTION: f64 = 1.0 / 3.0;

const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {} {} {}: {} ({:.1}s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Criterion number, name and wall-clock budget in seconds (`None` when
/// unbudgeted). A check that overruns its budget fails.
pub const CRITERIA: [(u8, &str, Option<u64>); 9] = [
    (1, "gradient correctness", Some(10)),
    (2, "kalman equivalence", Some(60)),
    (3, "colbo monotonicity and gap", Some(60)),
    (4, "bias rate", Some(300)),
    (5, "smoothed-score fidelity", Some(120)),
    (6, "lgssm learning replica", Some(600)),
    (7, "growth proposal replica", Some(600)),
    (8, "determinism", Some(60)),
    (9, "proposal-only block discipline", None),
];

/// Runs criterion `id`; `scratch` receives run directories for the
/// determinism check.
pub fn run_criterion(id: u8, scratch: &Path) -> Result<CheckOutcome> {
    let (_, name, budget) = *CRITERIA
        .iter()
        .find(|(i, _, _)| *i == id)
        .ok_or_else(|| Error::Config(format!("no criterion {id}")))?;
    let clock = Instant::now();
    let (mut passed, mut detail) = match id {
        1 => criterion_gradients(GRADIENT_INPUTS)?,
        2 => criterion_kalman_equivalence()?,
        3 => criterion_colbo()?,
        4 => criterion_bias_rate()?,
        5 => criterion_smoothed_score()?,
        6 => criterion_lgssm_replica()?,
        7 => criterion_growth_replica()?,
        8 => criterion_determinism(scratch)?,
        _ => criterion_block_discipline()?,
    };
    let elapsed = clock.elapsed();
    if let Some(limit) = budget {
        if elapsed > Duration::from_secs(limit) {
            passed = false;
            detail.push_str(&format!("; over the {limit}s budget"));
        }
    }
    Ok(CheckOutcome {
        id,
        name,
        passed,
        detail,
        elapsed,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - n| / max(|a|, |n|)` in the Euclidean norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-12)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

// ---------------------------------------------------------------- gradients

/// Worst relative error of `grad_log_weight` against central differences
/// over `inputs` random `(theta, x, y, u)`.
pub fn weight_gradient_error(model: &ModelConfig, spread: f64, inputs: usize, seed: u64) -> Result<f64> {
    let built = build_model(model)?;
    let ssm = &built.ssm;
    let layout = ssm.layout();
    let streams = Streams::new(seed);
    let mut worst: f64 = 0.0;
    for k in 0..inputs {
        let mut rng = streams.indexed(0, Role::Replicate, k as u64);
        let mut theta = built.initial_params(&streams)?;
        for (v, t) in theta.model_mut().iter_mut().zip(&built.truth) {
            *v = t + spread * rng.sample::<f64, _>(StandardNormal);
        }
        for v in theta.proposal_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let t = rng.gen_range(1..50);
        let x = ssm.dynamics().sample_initial(&mut rng);
        let x_next = ssm.dynamics().sample_transition(theta.model(), &x, t, &mut rng);
        let y = Observation::new(ssm.dynamics().sample_emission(theta.model(), &x_next, t, &mut rng), t)?;
        let u = crate::model::AuxNoise(normals(&mut rng, ssm.dim_x()));
        let analytic = ssm.grad_log_weight(&theta, &x, &y, &u)?;
        let numeric = central_difference(
            |th| {
                let p = ParamVector::new(th.to_vec(), layout).expect("same layout");
                ssm.log_weight(&p, &x, &y, &u).unwrap_or(f64::NAN)
            },
            theta.values(),
            FD_STEP,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Worst relative error of the landmark score.
pub fn landmark_score_error(inputs: usize, seed: u64) -> Result<f64> {
    let model = SlamModel::new(4, 0.2, 0.1);
    let streams = Streams::new(seed);
    let mut worst: f64 = 0.0;
    for k in 0..inputs {
        let mut rng = streams.indexed(1, Role::Replicate, k as u64);
        let theta: Vec<f64> = (0..8).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let x = model.sample_initial(&mut rng);
        let y = Observation::new(model.sample_emission(&theta, &x, 1, &mut rng), 1)?;
        let analytic = model.landmark_score(&theta, &x, &y.values)?;
        let numeric = central_difference(|th| model.log_emission(th, &x, &y), &theta, FD_STEP);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Worst relative error of MLP backpropagation (parameters and inputs
/// together) over random architectures.
pub fn mlp_gradient_error(nets: usize, seed: u64) -> Result<f64> {
    let streams = Streams::new(seed);
    let mut worst: f64 = 0.0;
    for k in 0..nets {
        let mut rng = streams.indexed(2, Role::Replicate, k as u64);
        let depth = rng.gen_range(1..=3);
        let mut widths = vec![rng.gen_range(1..=4)];
        widths.extend((0..depth).map(|_| rng.gen_range(2..=8)));
        widths.push(rng.gen_range(1..=3));
        let net = Mlp::new(widths)?;
        let params: Vec<f64> = net
            .init_params(&mut rng, 0.0)
            .into_iter()
            .map(|p| p + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let input = normals(&mut rng, net.input_dim());
        let upstream = normals(&mut rng, net.output_dim());
        let objective = |p: &[f64], x: &[f64]| -> f64 {
            let (out, _) = net.forward(p, x).expect("shapes fixed");
            out.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = net.forward(&params, &input)?;
        let mut analytic = vec![0.0; net.param_len()];
        let input_grad = net.backward(&params, &tape, &upstream, Some(&mut analytic))?;
        analytic.extend(input_grad);
        let mut numeric = central_difference(|p| objective(p, &input), &params, FD_STEP);
        numeric.extend(central_difference(|x| objective(&params, x), &input, FD_STEP));
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

fn criterion_gradients(inputs: usize) -> Result<(bool, String)> {
    let lgssm = ModelConfig::Lgssm(LgssmConfig {
        dim: 2,
        hidden: 8,
        ..Default::default()
    });
    let growth = ModelConfig::Growth(GrowthConfig {
        hidden: 8,
        ..Default::default()
    });
    let slam = ModelConfig::Slam(crate::models::SlamConfig {
        landmarks: 3,
        hidden: 8,
        ..Default::default()
    });
    let errors = [
        ("lgssm weight", weight_gradient_error(&lgssm, 0.2, inputs, 11)?),
        ("growth weight", weight_gradient_error(&growth, 0.1, inputs, 12)?),
        ("slam weight", weight_gradient_error(&slam, 1.0, inputs, 13)?),
        ("landmark score", landmark_score_error(inputs, 14)?),
        ("mlp backward", mlp_gradient_error(inputs, 15)?),
    ];
    let passed = errors.iter().all(|(_, e)| *e < GRADIENT_TOLERANCE);
    let detail = errors
        .iter()
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((passed, format!("worst relative errors over {inputs} inputs: {detail} (tol {GRADIENT_TOLERANCE:e})")))
}

// ------------------------------------------------------ kalman equivalence

fn frozen_bootstrap(model: LgssmModel) -> Result<(Ssm, ParamVector)> {
    Ok((Ssm::new(Box::new(model), Proposal::Bootstrap)?, ParamVector::from_blocks(&[], &[])?))
}

fn filter_only() -> SmoothingSchedule {
    SmoothingSchedule {
        resample: Rule::EssThreshold(0.5),
        backward: Rule::Never,
    }
}

/// Runs a filter over `trace` and calls `visit` on every cloud.
fn run_filter<F: FnMut(&ParticleCloud) -> Result<()>>(
    ssm: &Ssm,
    theta: &ParamVector,
    trace: &Trace,
    n: usize,
    schedule: &SmoothingSchedule,
    streams: &Streams,
    mut visit: F,
) -> Result<ParticleCloud> {
    let ys = &trace.observations;
    let mut cloud = ParticleCloud::initialize(ssm, theta, &ys[0], n, streams)?;
    visit(&cloud)?;
    for y in &ys[1..] {
        cloud = adasmooth_step(&cloud, ssm, theta, y, schedule, streams)?;
        visit(&cloud)?;
    }
    Ok(cloud)
}

fn criterion_kalman_equivalence() -> Result<(bool, String)> {
    let model = LgssmModel::fixed(vec![0.8], vec![1.0], vec![1.0], vec![0.5]);
    let trace = simulate(&model, &[], 500, 21)?;
    let prior = GaussianBelief::diagonal(&model.prior_mean, &[model.prior_std[0].powi(2)]);
    let kalman = kalman_filter(&LgssmParams::from_model(&model, &[]), &prior, &trace.values())?.means;
    let (ssm, theta) = frozen_bootstrap(model)?;
    let sizes = [100usize, 1_000, 10_000];
    let replicates = 4;
    let mut errors = Vec::new();
    for &n in &sizes {
        let mut total = 0.0;
        for r in 0..replicates {
            let mut sq = 0.0;
            run_filter(&ssm, &theta, &trace, n, &filter_only(), &Streams::new(1000 + r), |c| {
                sq += (c.mean()?[0] - kalman[c.step()][0]).powi(2);
                Ok(())
            })?;
            total += (sq / trace.observations.len() as f64).sqrt();
        }
        errors.push(total / replicates as f64);
    }
    let x: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let slope = loglog_slope(&x, &errors);
    let passed = (slope - MC_RATE).abs() <= MC_RATE_BAND;
    Ok((
        passed,
        format!(
            "rms filter-mean error {:.3e}/{:.3e}/{:.3e} at N=1e2/1e3/1e4, slope {slope:.3} (target {MC_RATE} +- {MC_RATE_BAND})",
            errors[0], errors[1], errors[2]
        ),
    ))
}

// ------------------------------------------------------------------- colbo

fn criterion_colbo() -> Result<(bool, String)> {
    let model = LgssmModel::fixed(vec![0.8], vec![1.0], vec![1.0], vec![0.5]);
    let params = LgssmParams::from_model(&model, &[]);
    let (ssm, theta) = frozen_bootstrap(model)?;
    let belief = GaussianBelief::diagonal(&[0.5], &[1.0]);
    let y = Observation::new(vec![2.0], 1)?;
    let exact = exact_likfunc_lgssm(&belief, &params, &y.values)?;
    let ms = [1usize, 2, 4, 8, 16];
    let mut est = Vec::new();
    for &m in &ms {
        est.push(mc_colbo(&ssm, &theta, FilterLaw::Belief(&belief), &y, m, 100_000, &Streams::new(300 + m as u64))?);
    }
    let monotone = est.windows(2).all(|w| w[1].0 >= w[0].0 - 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt());
    let gap2 = exact - est[1].0;
    let gap16 = exact - est[4].0;
    let passed = monotone && gap16 < 0.5 * gap2;
    let values = est.iter().map(|(v, s)| format!("{v:.4}+-{s:.4}")).collect::<Vec<_>>().join(", ");
    Ok((
        passed,
        format!("colbo at M=1..16: {values}; exact {exact:.4}; gap M=2 {gap2:.4}, M=16 {gap16:.4}; monotone within 3 SE: {monotone}"),
    ))
}

// --------------------------------------------------------------- bias rate

/// Setup of the bias-rate experiment: one step of a 1D LGSSM from a dense
/// quantile cloud of the exact posterior of `x_0`.
pub struct BiasSetup {
    pub ssm: Ssm,
    pub theta: ParamVector,
    pub cloud: ParticleCloud,
    pub y: Observation,
    /// Exact gradient of `log p(y_1 | y_0)` in `(a, b)`.
    pub target: Vec<f64>,
    /// Cloud averages of `L(x) = p(y_1 | x)` and of its gradient, the
    /// expectations of the control variates.
    pub mean_likelihood: f64,
    pub mean_likelihood_grad: [f64; 2],
}

pub fn bias_setup(particles: usize) -> Result<BiasSetup> {
    let (a, b, su, sv) = (0.8, 1.0, 1.0, 0.5);
    let (y0, y1) = (0.7, 1.9);
    let model = LgssmModel::learnable(vec![su], vec![sv]);
    let theta_vals = [a, b];
    let ys = vec![vec![y0], vec![y1]];
    let prior = GaussianBelief::diagonal(&model.prior_mean, &[model.prior_std[0].powi(2)]);
    let target = central_difference(
        |th| {
            kalman_filter(&LgssmParams::from_model(&model, th), &prior, &ys)
                .map(|r| r.increments[1])
                .unwrap_or(f64::NAN)
        },
        &theta_vals,
        1e-5,
    );
    let p0 = model.prior_std[0].powi(2);
    let s = b * b * p0 + sv * sv;
    let gain = p0 * b / s;
    let post_mean = model.prior_mean[0] + gain * (y0 - b * model.prior_mean[0]);
    let post_std = ((1.0 - gain * b) * p0).sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let xs: Vec<f64> = (0..particles)
        .map(|i| post_mean + post_std * std_normal.inverse_cdf((i as f64 + 0.5) / particles as f64))
        .collect();
    let ssm = Ssm::new(Box::new(model), Proposal::Bootstrap)?;
    let theta = ParamVector::from_blocks(&theta_vals, &[])?;
    let obs0 = Observation::new(vec![y0], 0)?;
    let mut stats = Vec::with_capacity(2 * particles);
    for x in &xs {
        stats.extend(ssm.score_emission(&theta, &[*x], &obs0)?);
    }
    let cloud = ParticleCloud::new(xs.clone(), 1, vec![0.0; particles], stats, 2, 0)?;

    let s2 = b * b * su * su + sv * sv;
    let (mut wbar, mut ga, mut gb) = (0.0, 0.0, 0.0);
    for x in &xs {
        let r = y1 - b * a * x;
        let l = (-0.5 * r * r / s2).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
        wbar += l;
        ga += l * r * b * x / s2;
        gb += l * (r * a * x / s2 - b * su * su / s2 + r * r * b * su * su / (s2 * s2));
    }
    let n = particles as f64;
    Ok(BiasSetup {
        ssm,
        theta,
        cloud,
        y: Observation::new(vec![y1], 1)?,
        target,
        mean_likelihood: wbar / n,
        mean_likelihood_grad: [ga / n, gb / n],
    })
}

/// Mean of the importance-weighted gradient at `m` over `calls` calls, with
/// control variates built from the check samples; returns (mean, standard
/// error) per coordinate.
pub fn bias_estimate(setup: &BiasSetup, m: usize, calls: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let streams = Streams::new(seed);
    let mut est = Vec::with_capacity(calls);
    let mut cv = Vec::with_capacity(calls);
    for r in 0..calls {
        let mut rng = streams.indexed(m as u64, Role::Replicate, r as u64);
        let terms = osiwae_terms(&setup.cloud, &setup.ssm, &setup.theta, &setup.y, m, setup.cloud.len(), Blocks::MODEL, &mut rng)?;
        let g = terms.with_score()?;
        est.push(g.values()[..2].to_vec());
        let c = &terms.checks;
        let sw = if c.count > 0 { c.log_sum.exp() / c.count as f64 } else { setup.mean_likelihood };
        let wbar = setup.mean_likelihood;
        cv.push([
            sw / wbar - 1.0,
            sw * c.mean_grad[0] / wbar - setup.mean_likelihood_grad[0] / wbar,
            sw * c.mean_grad[1] / wbar - setup.mean_likelihood_grad[1] / wbar,
        ]);
    }
    // Fit the control-variate coefficients on a pilot half, apply them on the rest.
    let half = calls / 2;
    let pilot_mean: Vec<f64> = (0..2).map(|k| est[..half].iter().map(|e| e[k]).sum::<f64>() / half as f64).collect();
    let c = DMatrix::from_fn(half, 3, |i, j| cv[i][j]);
    let ctc = c.transpose() * &c;
    let beta = ctc.clone().try_inverse().map(|inv| {
        (0..2)
            .map(|k| {
                let e = DVector::from_fn(half, |i, _| est[i][k] - pilot_mean[k]);
                inv.clone() * (c.transpose() * e)
            })
            .collect::<Vec<_>>()
    });
    let rest = calls - half;
    let mut mean = vec![0.0; 2];
    let mut se = vec![0.0; 2];
    for k in 0..2 {
        let adjusted: Vec<f64> = (half..calls)
            .map(|i| match &beta {
                Some(b) => est[i][k] - (0..3).map(|j| cv[i][j] * b[k][j]).sum::<f64>(),
                None => est[i][k],
            })
            .collect();
        let mu = adjusted.iter().sum::<f64>() / rest as f64;
        let var = adjusted.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (rest - 1) as f64;
        mean[k] = mu;
        se[k] = (var / rest as f64).sqrt();
    }
    Ok((mean, se))
}

pub const BIAS_SAMPLE_SIZES: [usize; 8] = [2, 4, 8, 16, 32, 64, 128, 256];

fn criterion_bias_rate() -> Result<(bool, String)> {
    let setup = bias_setup(10_000)?;
    let calls = 4_000;
    let mut bias = Vec::new();
    let mut ses = Vec::new();
    for &m in &BIAS_SAMPLE_SIZES {
        let (mean, se) = bias_estimate(&setup, m, calls, 41)?;
        let diff: Vec<f64> = mean.iter().zip(&setup.target).map(|(a, b)| a - b).collect();
        bias.push(norm(&diff));
        ses.push(norm(&se));
    }
    let x: Vec<f64> = BIAS_SAMPLE_SIZES.iter().map(|&m| m as f64).collect();
    let slope = loglog_slope(&x, &bias);
    let passed = (slope - BIAS_RATE).abs() <= BIAS_RATE_BAND;
    let table = x
        .iter()
        .zip(bias.iter().zip(&ses))
        .map(|(m, (b, s))| format!("M={m}: {b:.2e}+-{s:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((passed, format!("bias norms {table}; slope {slope:.3} (target {BIAS_RATE} +- {BIAS_RATE_BAND})")))
}

// ---------------------------------------------------- smoothed-score fidelity

/// Seed-averaged smoothed score after `horizon` observations and the exact
/// score, on a 1D LGSSM at parameters away from the truth.
pub fn smoothed_score_run(schedule: &SmoothingSchedule, particles: usize, seeds: u64, horizon: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let model = LgssmModel::learnable(vec![0.5], vec![1.0]);
    let trace = simulate(&model, &[0.8, 1.0], horizon, 51)?;
    let theta_vals = [0.6, 1.2];
    let exact = kalman_score(&model, &theta_vals, &trace.values())?;
    let ssm = Ssm::new(Box::new(model), Proposal::Bootstrap)?;
    let theta = ParamVector::from_blocks(&theta_vals, &[])?;
    let mut mean = vec![0.0; 2];
    let mut per_seed = 0.0;
    for s in 0..seeds {
        let cloud = run_filter(&ssm, &theta, &trace, particles, schedule, &Streams::new(500 + s), |_| Ok(()))?;
        let est = smoothed_expectation(&cloud)?;
        per_seed += relative_error(&est, &exact);
        mean.iter_mut().zip(&est).for_each(|(m, e)| *m += e / seeds as f64);
    }
    Ok((mean, exact, per_seed / seeds as f64))
}

fn criterion_smoothed_score() -> Result<(bool, String)> {
    let schedules = [
        ("backward always", SmoothingSchedule { resample: Rule::EssThreshold(0.5), backward: Rule::Always }),
        ("backward every 5", SmoothingSchedule { resample: Rule::EssThreshold(0.5), backward: Rule::EveryK(5) }),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, schedule) in &schedules {
        let (mean, exact, per_seed) = smoothed_score_run(schedule, 5_000, 20, 50)?;
        let err = relative_error(&mean, &exact);
        passed &= err < SCORE_TOLERANCE;
        parts.push(format!(
            "{name}: seed-mean ({:.3}, {:.3}) vs exact ({:.3}, {:.3}), relative error {err:.4}, mean per-seed error {per_seed:.4}",
            mean[0], mean[1], exact[0], exact[1]
        ));
    }
    Ok((passed, format!("{} (tol {SCORE_TOLERANCE})", parts.join("; "))))
}

// ------------------------------------------------------------ lgssm replica

pub struct ReplicaRun {
    pub initial_mae: f64,
    pub final_mae: f64,
}

/// One learner on the 2D LGSSM replica setting.
pub fn lgssm_replica_run(kind: LearnerKind, seed: u64, horizon: usize, config: &LearnerConfig) -> Result<ReplicaRun> {
    let proposal = if kind == LearnerKind::Rml { ProposalKind::Bootstrap } else { ProposalKind::Neural };
    let built = build_model(&ModelConfig::Lgssm(LgssmConfig {
        dim: 2,
        process_noise: 0.2,
        observation_noise: 0.5,
        proposal,
        ..Default::default()
    }))?;
    let trace = simulate(built.dynamics(), &built.truth, horizon, 100 + seed)?;
    let streams = Streams::new(seed);
    let theta = built.initial_params(&streams)?;
    let truth = built.truth_natural();
    let initial_mae = mean_absolute_error(&built.dynamics().natural_params(theta.model()), &truth);
    let mut learner = Learner::new(kind, config.clone(), &built.ssm, theta, streams)?;
    for y in &trace.observations {
        learner.observe(&built.ssm, y)?;
    }
    let final_mae = mean_absolute_error(&built.dynamics().natural_params(learner.theta.model()), &truth);
    Ok(ReplicaRun { initial_mae, final_mae })
}

fn criterion_lgssm_replica() -> Result<(bool, String)> {
    let config = LearnerConfig {
        particles: 200,
        m: 200,
        m_small: 5,
        ..Default::default()
    };
    let horizon = 20_000;
    let seeds = 10;
    let mut medians = Vec::new();
    let mut reductions = Vec::new();
    for kind in [LearnerKind::Osiwae, LearnerKind::Ovsmc, LearnerKind::Rml] {
        let runs = (0..seeds)
            .map(|s| lgssm_replica_run(kind, s, horizon, &config))
            .collect::<Result<Vec<_>>>()?;
        let initial = median(runs.iter().map(|r| r.initial_mae).collect());
        let last = median(runs.iter().map(|r| r.final_mae).collect());
        medians.push((kind, initial, last));
        reductions.push(runs.iter().all(|r| r.final_mae < MAE_REDUCTION * r.initial_mae));
    }
    let osiwae_beats_ovsmc = medians[0].2 <= medians[1].2;
    let passed = osiwae_beats_ovsmc && reductions[0] && reductions[2];
    let table = medians
        .iter()
        .zip(&reductions)
        .map(|((k, i, f), r)| format!("{} median MAE {i:.4} -> {f:.4} (every seed below a third: {r})", k.name()))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((passed, format!("{table}; osiwae <= ovsmc: {osiwae_beats_ovsmc}")))
}

// ----------------------------------------------------------- growth replica

/// Mean ESS fraction of a filter over `trace`, skipping the initial step.
pub fn mean_ess_fraction(ssm: &Ssm, theta: &ParamVector, trace: &Trace, particles: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    run_filter(ssm, theta, trace, particles, &filter_only(), &Streams::new(seed), |c| {
        if c.step() > 0 {
            total += c.ess()? / particles as f64;
            count += 1;
        }
        Ok(())
    })?;
    Ok(total / count as f64)
}

pub struct GrowthReplica {
    pub learned_ess: f64,
    pub bootstrap_ess: f64,
    pub learned_mode: f64,
    pub optimal_mode: f64,
}

pub fn growth_replica(steps: usize, config: &LearnerConfig, held_out: usize) -> Result<GrowthReplica> {
    let cfg = GrowthConfig::default();
    let built = build_model(&ModelConfig::Growth(cfg.clone()))?;
    let trace = simulate(built.dynamics(), &built.truth, steps, 71)?;
    let streams = Streams::new(7);
    let theta = built.initial_params(&streams)?;
    let mut learner = Learner::new(LearnerKind::Osiwae, config.clone(), &built.ssm, theta, streams)?;
    for y in &trace.observations {
        learner.observe(&built.ssm, y)?;
    }
    let test = simulate(built.dynamics(), &built.truth, held_out, 72)?;
    let learned_ess = mean_ess_fraction(&built.ssm, &learner.theta, &test, config.particles, 73)?;
    let boot = build_model(&ModelConfig::Growth(GrowthConfig {
        proposal: ProposalKind::Bootstrap,
        ..cfg
    }))?;
    let boot_theta = ParamVector::from_blocks(learner.theta.model(), &[])?;
    let bootstrap_ess = mean_ess_fraction(&boot.ssm, &boot_theta, &test, config.particles, 73)?;

    let probe = GROWTH_PROBE;
    let y = Observation::new(vec![probe.y], probe.t)?;
    let learned_mode = built.ssm.proposal_step(&learner.theta, &[probe.x], &y)?.mean[0];
    let grid = linspace(-25.0, 25.0, 5001);
    let truth = ParamVector::from_blocks(&built.truth, learner.theta.proposal())?;
    let values = grid
        .iter()
        .map(|&xn| Ok(built.ssm.log_transition(&truth, &[probe.x], &[xn], probe.t)? + built.ssm.log_emission(&truth, &[xn], &y)?))
        .collect::<Result<Vec<f64>>>()?;
    let optimal_mode = grid_modes(&grid, &values).first().map_or(f64::NAN, |m| m.0);
    Ok(GrowthReplica {
        learned_ess,
        bootstrap_ess,
        learned_mode,
        optimal_mode,
    })
}

fn criterion_growth_replica() -> Result<(bool, String)> {
    let config = LearnerConfig {
        particles: 500,
        m: 200,
        m_small: 5,
        ..Default::default()
    };
    let r = growth_replica(10_000, &config, 1_000)?;
    let ess_ok = r.learned_ess > r.bootstrap_ess;
    let mode_ok = (r.learned_mode - r.optimal_mode).abs() <= 1.0;
    Ok((
        ess_ok && mode_ok,
        format!(
            "held-out mean ESS fraction learned {:.4} vs bootstrap {:.4}; learned mode {:.3} vs optimal-kernel mode {:.3}",
            r.learned_ess, r.bootstrap_ess, r.learned_mode, r.optimal_mode
        ),
    ))
}

// ------------------------------------------------------------- determinism

pub fn determinism_config(dir: &Path) -> Result<ExperimentConfig> {
    let config = ExperimentConfig {
        seed: 17,
        horizon: 300,
        learner: LearnerKind::Osiwae,
        data_seed: None,
        stream: None,
        model: ModelConfig::Lgssm(LgssmConfig {
            dim: 2,
            hidden: 16,
            ..Default::default()
        }),
        training: LearnerConfig {
            particles: 50,
            m: 20,
            m_small: 3,
            ..Default::default()
        },
        output: OutputConfig {
            dir: dir.to_path_buf(),
            metric_every: 10,
            checkpoint_every: 100,
            wall_clock: false,
        },
    };
    config.validate()?;
    Ok(config)
}

fn criterion_determinism(scratch: &Path) -> Result<(bool, String)> {
    let dirs: Vec<_> = ["first", "second", "resumed"].iter().map(|d| scratch.join(d)).collect();
    for d in &dirs {
        if d.exists() {
            std::fs::remove_dir_all(d)?;
        }
    }
    for d in &dirs[..2] {
        run_experiment(&determinism_config(d)?, &RunOptions::default())?;
    }
    let resumed = determinism_config(&dirs[2])?;
    run_experiment(&resumed, &RunOptions { stop_at: Some(149), resume: None })?;
    run_experiment(
        &resumed,
        &RunOptions {
            resume: Some(dirs[2].join(CHECKPOINT_FILE)),
            stop_at: None,
        },
    )?;
    let read = |d: &Path, f: &str| std::fs::read(d.join(f));
    let rerun_metrics = read(&dirs[0], METRICS_FILE)? == read(&dirs[1], METRICS_FILE)?;
    let resume_metrics = read(&dirs[0], METRICS_FILE)? == read(&dirs[2], METRICS_FILE)?;
    // Checkpoints embed the output directory through the config text, so
    // compare the learner state they carry.
    let learner = |d: &Path| super::checkpoint::Checkpoint::load(&d.join(CHECKPOINT_FILE)).map(|c| c.learner);
    let rerun_state = learner(&dirs[0])? == learner(&dirs[1])?;
    let resume_state = learner(&dirs[0])? == learner(&dirs[2])?;
    let passed = rerun_metrics && resume_metrics && rerun_state && resume_state;
    Ok((
        passed,
        format!(
            "rerun metrics identical: {rerun_metrics}, rerun state identical: {rerun_state}, resumed metrics identical: {resume_metrics}, resumed state identical: {resume_state}"
        ),
    ))
}

// -------------------------------------------------------- block discipline

fn criterion_block_discipline() -> Result<(bool, String)> {
    let built = build_model(&ModelConfig::Lgssm(LgssmConfig {
        dim: 2,
        learn_model: false,
        hidden: 16,
        ..Default::default()
    }))?;
    let ssm = &built.ssm;
    let streams = Streams::new(91);
    let theta = built.initial_params(&streams)?;
    let trace = simulate(built.dynamics(), &built.truth, 1_000, 92)?;
    let cloud = ParticleCloud::initialize(ssm, &theta, &trace.observations[0], 100, &streams)?;
    let mut identical = true;
    for k in 0..20u64 {
        let y = &trace.observations[1];
        let a = osiwae_gradient(&cloud, ssm, &theta, y, 20, Blocks::ALL, &mut streams.indexed(k, Role::Replicate, 0))?;
        let b = ovsmc_gradient(&cloud, ssm, &theta, y, 20, Blocks::ALL, &mut streams.indexed(k, Role::Replicate, 0))?;
        identical &= a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    let config = LearnerConfig {
        particles: 64,
        m: 16,
        m_small: 4,
        ..Default::default()
    };
    let run = |kind| -> Result<Learner> {
        let mut l = Learner::new(kind, config.clone(), ssm, theta.clone(), streams)?;
        for y in &trace.observations {
            l.observe(ssm, y)?;
        }
        Ok(l)
    };
    let a = run(LearnerKind::Osiwae)?;
    let b = run(LearnerKind::Ovsmc)?;
    let runs_identical = a.theta == b.theta && a.cloud == b.cloud;
    let model_untouched = a.theta.layout().model_len == 0 && a.optimizer.steps[0] == 0 && b.optimizer.steps[0] == 0;
    let proposal_moved = a.theta.proposal() != theta.proposal();
    let passed = identical && runs_identical && model_untouched && proposal_moved;
    Ok((
        passed,
        format!(
            "gradients bit-identical over 20 draws: {identical}; 1000-step runs identical: {runs_identical}; model block untouched (no model-block steps): {model_untouched}; proposal block learned: {proposal_moved}"
        ),
    ))
}
