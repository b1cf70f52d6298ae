//! Exact and brute-force references: the Kalman filter and its
//! finite-difference sensitivities, closed-form one-step likelihoods and
//! optimal kernels for the linear Gaussian model, Monte Carlo estimates of the
//! importance-weighted bound, and the growth model's optimal kernel on a grid.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::filtering::{log_sum_exp, ParticleCloud};
use crate::model::{Dynamics, Observation, Ssm, HALF_LN_2PI};
use crate::models::{GrowthModel, LgssmModel};
use crate::params::{Blocks, ParamVector};
use crate::rng::{Role, Streams};

/// `x' = A x + S_u u`, `y = B x' + S_v v` with `Q = S_u S_u^T`, `R = S_v S_v^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LgssmParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LgssmParams {
    pub fn diagonal(a: &[f64], b: &[f64], process_std: &[f64], observation_std: &[f64]) -> Self {
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        let sq = |v: &[f64]| v.iter().map(|s| s * s).collect::<Vec<_>>();
        Self {
            a: diag(a),
            b: diag(b),
            q: diag(&sq(process_std)),
            r: diag(&sq(observation_std)),
        }
    }

    /// The parameters of `model` under the model block `theta`.
    pub fn from_model(model: &LgssmModel, theta: &[f64]) -> Self {
        let (a, b) = model.coefficients(theta);
        Self::diagonal(a, b, &model.process_std, &model.observation_std)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// A Gaussian filter distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim("belief covariance", mean.len(), cov.nrows())?;
        check_dim("belief covariance", mean.len(), cov.ncols())?;
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * (1.0 + cov.amax()) {
            return Err(Error::Singular(format!("covariance is not symmetric (asymmetry {asym:e})")));
        }
        let min_eig = cov.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 {
            return Err(Error::Singular(format!("covariance has eigenvalue {min_eig:e}")));
        }
        Ok(Self { mean, cov })
    }

    pub fn point_mass(mean: &[f64]) -> Self {
        let d = mean.len();
        Self {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::zeros(d, d),
        }
    }

    pub fn diagonal(mean: &[f64], var: &[f64]) -> Self {
        Self {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
        }
    }

    /// Draws from the belief through a symmetric square root, which also
    /// handles singular covariances.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eig = self.cov.clone().symmetric_eigen();
        let d = self.mean.len();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let scaled = DVector::from_iterator(d, (0..d).map(|k| eig.eigenvalues[k].max(0.0).sqrt() * z[k]));
        (&self.mean + &eig.eigenvectors * scaled).iter().copied().collect()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn kalman_predict(belief: &GaussianBelief, params: &LgssmParams) -> GaussianBelief {
    GaussianBelief {
        mean: &params.a * &belief.mean,
        cov: symmetrize(&params.a * &belief.cov * params.a.transpose() + &params.q),
    }
}

/// Conditions a predicted belief on `y`; returns the posterior and
/// `log N(y; B m, B P B^T + R)`.
pub fn kalman_update(predicted: &GaussianBelief, params: &LgssmParams, y: &[f64]) -> Result<(GaussianBelief, f64)> {
    check_dim("observation", params.b.nrows(), y.len())?;
    let innovation = DVector::from_column_slice(y) - &params.b * &predicted.mean;
    let s = symmetrize(&params.b * &predicted.cov * params.b.transpose() + &params.r);
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("innovation covariance is not positive definite".into()))?;
    let solved = chol.solve(&innovation);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let d = y.len() as f64;
    let loglik = -d * HALF_LN_2PI - 0.5 * log_det - 0.5 * innovation.dot(&solved);
    // K = P B^T S^{-1}
    let pbt = &predicted.cov * params.b.transpose();
    let gain = chol.solve(&pbt.transpose()).transpose();
    let mean = &predicted.mean + &gain * innovation;
    let n = predicted.mean.len();
    let i_kb = DMatrix::identity(n, n) - &gain * &params.b;
    let cov = symmetrize(&i_kb * &predicted.cov * i_kb.transpose() + &gain * &params.r * gain.transpose());
    Ok((GaussianBelief { mean, cov }, loglik))
}

/// One predict-update cycle.
pub fn kalman_step(belief: &GaussianBelief, params: &LgssmParams, y: &[f64]) -> Result<(GaussianBelief, f64)> {
    kalman_update(&kalman_predict(belief, params), params, y)
}

/// `log N(y; B A m, B (A P A^T + Q) B^T + R)`.
pub fn exact_likfunc_lgssm(belief: &GaussianBelief, params: &LgssmParams, y: &[f64]) -> Result<f64> {
    Ok(kalman_step(belief, params, y)?.1)
}

/// Filtering means and the total log-likelihood of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanRun {
    pub means: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub increments: Vec<f64>,
}

/// Runs the filter from `prior` (the law of `x_0`); `ys[0]` updates the
/// prior directly and later observations follow a predict step.
pub fn kalman_filter(params: &LgssmParams, prior: &GaussianBelief, ys: &[Vec<f64>]) -> Result<KalmanRun> {
    let mut means = Vec::with_capacity(ys.len());
    let mut increments = Vec::with_capacity(ys.len());
    let mut belief = prior.clone();
    for (t, y) in ys.iter().enumerate() {
        let predicted = if t == 0 { belief } else { kalman_predict(&belief, params) };
        let (post, inc) = kalman_update(&predicted, params, y)?;
        means.push(post.mean.iter().copied().collect());
        increments.push(inc);
        belief = post;
    }
    Ok(KalmanRun {
        means,
        log_likelihood: increments.iter().sum(),
        increments,
    })
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Step used by [`kalman_score`].
pub const KALMAN_SCORE_STEP: f64 = 1e-6;

/// `grad_theta log p_theta(y_{0:T})` for the model block of an LGSSM, by
/// central differences of the Kalman log-likelihood with step `h`.
pub fn kalman_score_with_step(
    model: &LgssmModel,
    theta: &[f64],
    ys: &[Vec<f64>],
    h: f64,
) -> Result<Vec<f64>> {
    let prior = GaussianBelief::diagonal(&model.prior_mean, &model.prior_std.iter().map(|s| s * s).collect::<Vec<_>>());
    let mut failure = None;
    let grad = central_difference(
        |th| match kalman_filter(&LgssmParams::from_model(model, th), &prior, ys) {
            Ok(run) => run.log_likelihood,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        theta,
        h,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(grad),
    }
}

pub fn kalman_score(model: &LgssmModel, theta: &[f64], ys: &[Vec<f64>]) -> Result<Vec<f64>> {
    kalman_score_with_step(model, theta, ys, KALMAN_SCORE_STEP)
}

/// The locally optimal kernel `p(x' | x, y)` of an LGSSM.
pub fn optimal_proposal_lgssm(params: &LgssmParams, x: &[f64], y: &[f64]) -> Result<GaussianBelief> {
    let point = GaussianBelief::point_mass(x);
    Ok(kalman_step(&point, params, y)?.0)
}

/// Where the importance-weighted bound draws its conditioning states from.
#[derive(Debug, Clone, Copy)]
pub enum FilterLaw<'a> {
    Cloud(&'a ParticleCloud),
    Belief(&'a GaussianBelief),
}

/// Monte Carlo estimate of `E[log (1/M) sum_m w(X_m, y, U_m)]` with `X_m`
/// drawn i.i.d. from the filter law, and its standard error.
pub fn mc_colbo(
    ssm: &Ssm,
    theta: &ParamVector,
    filter: FilterLaw<'_>,
    y: &Observation,
    m: usize,
    replicates: usize,
    streams: &Streams,
) -> Result<(f64, f64)> {
    if m == 0 || replicates < 2 {
        return Err(Error::Config("mc_colbo needs M >= 1 and at least 2 replicates".into()));
    }
    let probs = match filter {
        FilterLaw::Cloud(c) => Some(c.probabilities()?),
        FilterLaw::Belief(_) => None,
    };
    let dist = match &probs {
        Some(p) => Some(rand::distributions::WeightedIndex::new(p).map_err(|_| Error::ZeroMass("filter cloud"))?),
        None => None,
    };
    let dx = ssm.dim_x();
    let mut values = Vec::with_capacity(replicates);
    let mut log_w = vec![0.0; m];
    let mut u = vec![0.0; dx];
    for r in 0..replicates {
        let mut rng = streams.indexed(y.time_index as u64, Role::Replicate, r as u64);
        for lw in log_w.iter_mut() {
            let x: Vec<f64> = match (filter, &dist) {
                (FilterLaw::Cloud(c), Some(d)) => c.particle(rand::distributions::Distribution::sample(d, &mut rng)).to_vec(),
                (FilterLaw::Belief(b), _) => b.sample(&mut rng),
                _ => unreachable!(),
            };
            u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            *lw = ssm.weigh(theta, &x, y, &u, Blocks::NONE, None)?.log_weight;
        }
        values.push(log_sum_exp(&log_w) - (m as f64).ln());
    }
    let n = replicates as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Unnormalised `log g(y | x') + log m(x' | x)` over `grid` for the move into
/// step `t`.
pub fn growth_optimal_logdensity(model: &GrowthModel, theta: &[f64], x: f64, y: f64, t: usize, grid: &[f64]) -> Vec<f64> {
    let obs = Observation {
        values: vec![y],
        time_index: t,
    };
    grid.iter()
        .map(|&xn| model.log_emission(theta, &[xn], &obs) + model.log_transition(theta, &[x], &[xn], t))
        .collect()
}

/// Largest value and its grid point.
pub fn grid_argmax(grid: &[f64], values: &[f64]) -> (f64, f64) {
    grid.iter()
        .zip(values)
        .fold((f64::NAN, f64::NEG_INFINITY), |best, (&g, &v)| if v > best.1 { (g, v) } else { best })
}

/// Local maxima of `values` over the grid, strongest first.
pub fn grid_modes(grid: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    let mut modes: Vec<(f64, f64)> = (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] >= values[i - 1] && values[i] > values[i + 1])
        .map(|i| (grid[i], values[i]))
        .collect();
    modes.sort_by(|a, b| b.1.total_cmp(&a.1));
    modes
}
