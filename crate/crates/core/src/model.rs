//! State-space model and proposal abstractions, and the importance weight
//! every estimator consumes.
//!
//! A model is a [`Dynamics`] implementation (transition, emission, their
//! scores, and the hooks proposals need) paired with a [`Proposal`] family.
//! The weight of a proposed move is
//!
//! ```text
//! w(x, y, u) = g(y | x') m(x' | x) / r(x' | x, y),   x' = mean(x, y) + std(x, y) * u
//! ```
//!
//! with `u` standard Gaussian. Its parameter gradient includes the pathwise
//! term through `x'`. All densities are handled in the log domain.

use std::fmt::Debug;
use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::neural::{GaussianProposalHead, GaussianStep, HeadTape};
use crate::params::{Blocks, ParamLayout, ParamVector};

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A latent state `x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState(pub Vec<f64>);

impl LatentState {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent state"));
        }
        Ok(Self(coords))
    }
}

impl std::ops::Deref for LatentState {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// An observation `y_t` together with its time index `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
    pub time_index: usize,
}

impl Observation {
    pub fn new(values: Vec<f64>, time_index: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(Self { values, time_index })
    }
}

/// Standard Gaussian noise driving the reparameterised proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxNoise(pub Vec<f64>);

impl AuxNoise {
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self((0..dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }
}

impl std::ops::Deref for AuxNoise {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Transition and emission densities of a state-space model, parameterised by
/// the model block `theta` of the parameter vector.
///
/// `t` in transition methods is the time index of the destination state.
/// Score and state-gradient methods *accumulate* into `out`.
pub trait Dynamics: Debug + Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn model_param_len(&self) -> usize;

    /// Human-readable parameter values (positivity-constrained entries are
    /// stored as logs and reported on their natural scale).
    fn natural_params(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn sample_transition(&self, theta: &[f64], x: &[f64], t: usize, rng: &mut dyn RngCore) -> Vec<f64>;
    fn sample_emission(&self, theta: &[f64], x: &[f64], t: usize, rng: &mut dyn RngCore) -> Vec<f64>;

    fn log_transition(&self, theta: &[f64], x: &[f64], x_next: &[f64], t: usize) -> f64;

    /// `log m(x_next | xs[j])` for every row `j` of the row-major `xs`.
    fn log_transition_batch(&self, theta: &[f64], xs: &[f64], x_next: &[f64], t: usize, out: &mut [f64]) {
        let d = self.dim_x();
        for (o, x) in out.iter_mut().zip(xs.chunks_exact(d)) {
            *o = self.log_transition(theta, x, x_next, t);
        }
    }

    fn log_emission(&self, theta: &[f64], x: &[f64], y: &Observation) -> f64;

    fn score_transition(&self, theta: &[f64], x: &[f64], x_next: &[f64], t: usize, out: &mut [f64]);
    fn score_emission(&self, theta: &[f64], x: &[f64], y: &Observation, out: &mut [f64]) -> Result<()>;

    /// Gradient of `log m(x_next | x)` with respect to `x_next`.
    fn grad_next_log_transition(&self, theta: &[f64], x: &[f64], x_next: &[f64], t: usize, out: &mut [f64]);
    /// Gradient of `log g(y | x)` with respect to `x`.
    fn grad_state_log_emission(&self, theta: &[f64], x: &[f64], y: &Observation, out: &mut [f64]) -> Result<()>;

    /// The transition kernel as a Gaussian step (the bootstrap proposal).
    fn bootstrap(&self, theta: &[f64], x: &[f64], t: usize) -> GaussianStep;
    /// Chains upstream gradients on the bootstrap mean and log-std into `theta`.
    fn bootstrap_backward(&self, theta: &[f64], x: &[f64], t: usize, d_mean: &[f64], d_log_std: &[f64], out: &mut [f64]);

    /// Input fed to a learned proposal head.
    fn proposal_features(&self, theta: &[f64], x: &[f64], y: &Observation) -> Vec<f64>;
    fn feature_dim(&self) -> usize;
    /// Whether the features depend on `theta` (and need backpropagation into it).
    fn features_depend_on_model(&self) -> bool {
        false
    }
    fn features_backward(&self, _theta: &[f64], _x: &[f64], _y: &Observation, _d_features: &[f64], _out: &mut [f64]) {}

    /// Locally optimal proposal `p(x' | x, y)` when it is Gaussian and known.
    fn locally_optimal(&self, _theta: &[f64], _x: &[f64], _y: &Observation) -> Option<GaussianStep> {
        None
    }
    fn locally_optimal_backward(&self, _theta: &[f64], _x: &[f64], _y: &Observation, _d_mean: &[f64], _d_log_std: &[f64], _out: &mut [f64]) {}
}

/// Proposal family used to move particles.
#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    /// Propose from the transition kernel; the weight reduces to the emission density.
    Bootstrap,
    /// The exact locally optimal kernel (only for models that provide it).
    LocallyOptimal,
    /// A learned Gaussian head whose parameters form the proposal block.
    Neural(GaussianProposalHead),
}

/// A proposed move with its log weight.
#[derive(Debug, Clone)]
pub struct Weighted {
    pub next: Vec<f64>,
    pub log_weight: f64,
}

/// A state-space model paired with its proposal.
#[derive(Debug)]
pub struct Ssm {
    dynamics: Box<dyn Dynamics>,
    proposal: Proposal,
    layout: ParamLayout,
}

enum StepTape {
    None,
    Neural(HeadTape),
}

/// The proposal step from one ancestor, reusable across noise draws.
pub struct Prepared {
    step: GaussianStep,
    tape: StepTape,
}

impl Ssm {
    pub fn new(dynamics: Box<dyn Dynamics>, proposal: Proposal) -> Result<Self> {
        let proposal_len = match &proposal {
            Proposal::Bootstrap => 0,
            Proposal::LocallyOptimal => {
                let probe = Observation {
                    values: vec![0.0; dynamics.dim_y()],
                    time_index: 1,
                };
                let theta = vec![0.5; dynamics.model_param_len()];
                if dynamics.locally_optimal(&theta, &vec![0.0; dynamics.dim_x()], &probe).is_none() {
                    return Err(Error::Config("model has no closed-form locally optimal proposal".into()));
                }
                0
            }
            Proposal::Neural(head) => {
                check_dim("proposal head input", dynamics.feature_dim(), head.input_dim())?;
                check_dim("proposal head output", dynamics.dim_x(), head.output_dim())?;
                head.param_len()
            }
        };
        let layout = ParamLayout::new(dynamics.model_param_len(), proposal_len)?;
        Ok(Self {
            dynamics,
            proposal,
            layout,
        })
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    pub fn proposal(&self) -> &Proposal {
        &self.proposal
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn dim_x(&self) -> usize {
        self.dynamics.dim_x()
    }

    pub fn dim_y(&self) -> usize {
        self.dynamics.dim_y()
    }

    fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        if theta.layout() != self.layout {
            return Err(Error::DimensionMismatch {
                what: "parameter layout",
                expected: self.layout.len(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        check_dim("latent state", self.dim_x(), x.len())
    }

    fn check_y(&self, y: &Observation) -> Result<()> {
        check_dim("observation", self.dim_y(), y.values.len())
    }

    pub fn log_transition(&self, theta: &ParamVector, x: &[f64], x_next: &[f64], t: usize) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        self.check_x(x_next)?;
        Ok(self.dynamics.log_transition(theta.model(), x, x_next, t))
    }

    pub fn log_emission(&self, theta: &ParamVector, x: &[f64], y: &Observation) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        self.check_y(y)?;
        Ok(self.dynamics.log_emission(theta.model(), x, y))
    }

    /// `grad_theta log m(x_next | x)`, full length; the proposal block is zero.
    pub fn score_transition(&self, theta: &ParamVector, x: &[f64], x_next: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        self.check_x(x_next)?;
        let mut out = vec![0.0; self.layout.len()];
        self.dynamics
            .score_transition(theta.model(), x, x_next, t, &mut out[self.layout.model_range()]);
        Ok(out)
    }

    /// `grad_theta log g(y | x)`, full length; the proposal block is zero.
    pub fn score_emission(&self, theta: &ParamVector, x: &[f64], y: &Observation) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        self.check_y(y)?;
        let mut out = vec![0.0; self.layout.len()];
        self.dynamics
            .score_emission(theta.model(), x, y, &mut out[self.layout.model_range()])?;
        Ok(out)
    }

    fn step_with_tape(&self, theta: &ParamVector, x: &[f64], y: &Observation) -> Result<(GaussianStep, StepTape)> {
        let model = theta.model();
        match &self.proposal {
            Proposal::Bootstrap => Ok((self.dynamics.bootstrap(model, x, y.time_index), StepTape::None)),
            Proposal::LocallyOptimal => {
                let step = self
                    .dynamics
                    .locally_optimal(model, x, y)
                    .ok_or_else(|| Error::Config("locally optimal proposal unavailable".into()))?;
                Ok((step, StepTape::None))
            }
            Proposal::Neural(head) => {
                let features = self.dynamics.proposal_features(model, x, y);
                let (step, tape) = head.forward(theta.proposal(), &features)?;
                Ok((step, StepTape::Neural(tape)))
            }
        }
    }

    /// Mean and log standard deviation of `r(. | x, y)`.
    pub fn proposal_step(&self, theta: &ParamVector, x: &[f64], y: &Observation) -> Result<GaussianStep> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        self.check_y(y)?;
        Ok(self.step_with_tape(theta, x, y)?.0)
    }

    /// `log r(x_next | x, y)`.
    pub fn log_proposal(&self, theta: &ParamVector, x: &[f64], y: &Observation, x_next: &[f64]) -> Result<f64> {
        self.check_x(x_next)?;
        let step = self.proposal_step(theta, x, y)?;
        Ok(gaussian_log_density(&step, x_next))
    }

    /// The reparameterised proposal `h(x, y, u) = mean + std * u`.
    pub fn propose(&self, theta: &ParamVector, x: &[f64], y: &Observation, u: &AuxNoise) -> Result<LatentState> {
        check_dim("auxiliary noise", self.dim_x(), u.len())?;
        let step = self.proposal_step(theta, x, y)?;
        let next = apply_noise(&step, u)?;
        Ok(LatentState(next))
    }

    pub fn log_weight(&self, theta: &ParamVector, x: &[f64], y: &Observation, u: &AuxNoise) -> Result<f64> {
        Ok(self.weigh(theta, x, y, u, Blocks::NONE, None)?.log_weight)
    }

    pub fn grad_log_weight(&self, theta: &ParamVector, x: &[f64], y: &Observation, u: &AuxNoise) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.layout.len()];
        self.weigh(theta, x, y, u, Blocks::ALL, Some(&mut grad))?;
        Ok(grad)
    }

    /// Proposes `x'`, evaluates `log w`, and when `grad` is given accumulates
    /// `grad_theta log w` restricted to `blocks` into it (full length).
    pub fn weigh(
        &self,
        theta: &ParamVector,
        x: &[f64],
        y: &Observation,
        u: &[f64],
        blocks: Blocks,
        grad: Option<&mut [f64]>,
    ) -> Result<Weighted> {
        let prepared = self.prepare(theta, x, y)?;
        self.weigh_prepared(theta, x, y, &prepared, u, blocks, grad)
    }

    /// Runs the proposal from ancestor `x`; pair with [`Ssm::weigh_prepared`].
    pub fn prepare(&self, theta: &ParamVector, x: &[f64], y: &Observation) -> Result<Prepared> {
        self.check_theta(theta)?;
        self.check_x(x)?;
        self.check_y(y)?;
        let (step, tape) = self.step_with_tape(theta, x, y)?;
        Ok(Prepared { step, tape })
    }

    /// [`Ssm::weigh`] with the proposal step already computed by
    /// [`Ssm::prepare`] for the same `theta`, `x` and `y`.
    #[allow(clippy::too_many_arguments)]
    pub fn weigh_prepared(
        &self,
        theta: &ParamVector,
        x: &[f64],
        y: &Observation,
        prepared: &Prepared,
        u: &[f64],
        blocks: Blocks,
        grad: Option<&mut [f64]>,
    ) -> Result<Weighted> {
        check_dim("auxiliary noise", self.dim_x(), u.len())?;
        let dyns = self.dynamics.as_ref();
        let model = theta.model();
        let t = y.time_index;
        let Prepared { step, tape } = prepared;
        let next = apply_noise(step, u)?;
        let log_g = dyns.log_emission(model, &next, y);
        let bootstrap = matches!(self.proposal, Proposal::Bootstrap);
        let log_weight = if bootstrap {
            log_g
        } else {
            let log_m = dyns.log_transition(model, x, &next, t);
            let log_r = gaussian_log_density_from_noise(step, u);
            log_g + log_m - log_r
        };
        if log_weight.is_nan() || log_weight == f64::INFINITY {
            return Err(Error::NonFinite("log weight"));
        }
        if log_weight == f64::NEG_INFINITY && !bootstrap {
            return Err(Error::SupportViolation(format!(
                "zero target density at proposed state {next:?}"
            )));
        }
        let Some(grad) = grad else {
            return Ok(Weighted { next, log_weight });
        };
        check_dim("weight gradient", self.layout.len(), grad.len())?;

        let d = self.dim_x();
        // Explicit parameter dependence at fixed x'.
        let mut d_next = vec![0.0; d];
        dyns.grad_state_log_emission(model, &next, y, &mut d_next)?;
        let (grad_model, grad_prop) = grad.split_at_mut(self.layout.model_len);
        if blocks.model {
            dyns.score_emission(model, &next, y, grad_model)?;
            if !bootstrap {
                dyns.score_transition(model, x, &next, t, grad_model);
            }
        }
        if !bootstrap {
            dyns.grad_next_log_transition(model, x, &next, t, &mut d_next);
        }
        // Pathwise term: x' = mean + exp(log_std) * u, and -log r contributes +1 per log_std.
        let d_mean = d_next;
        let d_log_std: Vec<f64> = (0..d)
            .map(|k| {
                let sigma = step.log_std[k].exp();
                let path = d_mean[k] * sigma * u[k];
                if bootstrap {
                    path
                } else {
                    path + 1.0
                }
            })
            .collect();
        match (&self.proposal, tape) {
            (Proposal::Bootstrap, _) => {
                if blocks.model {
                    dyns.bootstrap_backward(model, x, t, &d_mean, &d_log_std, grad_model);
                }
            }
            (Proposal::LocallyOptimal, _) => {
                if blocks.model {
                    dyns.locally_optimal_backward(model, x, y, &d_mean, &d_log_std, grad_model);
                }
            }
            (Proposal::Neural(head), StepTape::Neural(tape)) => {
                let need_features = blocks.model && dyns.features_depend_on_model();
                if blocks.proposal || need_features {
                    let pg = if blocks.proposal { Some(grad_prop) } else { None };
                    let d_features = head.backward(theta.proposal(), tape, &d_mean, &d_log_std, pg)?;
                    if need_features {
                        dyns.features_backward(model, x, y, &d_features, grad_model);
                    }
                }
            }
            (Proposal::Neural(_), StepTape::None) => unreachable!("neural proposal always records a tape"),
        }
        Ok(Weighted { next, log_weight })
    }

    /// Samples `x_0` from the initial law and returns it.
    pub fn sample_initial(&self, rng: &mut dyn RngCore) -> LatentState {
        LatentState(self.dynamics.sample_initial(rng))
    }
}

fn apply_noise(step: &GaussianStep, u: &[f64]) -> Result<Vec<f64>> {
    let next: Vec<f64> = step
        .mean
        .iter()
        .zip(&step.log_std)
        .zip(u)
        .map(|((m, s), u)| m + s.exp() * u)
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("proposed state"));
    }
    Ok(next)
}

/// Log density of a diagonal Gaussian step at `x`.
pub fn gaussian_log_density(step: &GaussianStep, x: &[f64]) -> f64 {
    step.mean
        .iter()
        .zip(&step.log_std)
        .zip(x)
        .map(|((m, s), x)| {
            let z = (x - m) * (-s).exp();
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum()
}

fn gaussian_log_density_from_noise(step: &GaussianStep, u: &[f64]) -> f64 {
    step.log_std
        .iter()
        .zip(u)
        .map(|(s, u)| -0.5 * u * u - s - HALF_LN_2PI)
        .sum()
}

/// Log density of `N(x; mean, var)` in one dimension.
#[inline]
pub fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * r * r / var
}
