//! Concrete experiment models and their construction from configuration.

pub mod growth;
pub mod lgssm;
pub mod slam;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use growth::GrowthModel;
pub use lgssm::LgssmModel;
pub use slam::{slam_angle_residual, SlamModel};

use crate::error::{Error, Result};
use crate::model::{Dynamics, Proposal, Ssm};
use crate::neural::GaussianProposalHead;
use crate::params::ParamVector;
use crate::rng::{Role, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Bootstrap,
    Optimal,
    #[default]
    Neural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Lgssm(LgssmConfig),
    Growth(GrowthConfig),
    Slam(SlamConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LgssmConfig {
    pub dim: usize,
    /// Diagonal entry of `S_u` (a standard deviation).
    pub process_noise: f64,
    /// Diagonal entry of `S_v` (a standard deviation).
    pub observation_noise: f64,
    pub prior_std: f64,
    /// Explicit true diagonals; drawn from `truth_range` when absent.
    pub a: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
    pub truth_seed: u64,
    pub truth_range: [f64; 2],
    /// Initial estimates of the diagonals are drawn uniformly from this range.
    pub init_range: [f64; 2],
    pub learn_model: bool,
    pub proposal: ProposalKind,
    pub hidden: usize,
}

impl Default for LgssmConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            process_noise: 0.2,
            observation_noise: 0.5,
            prior_std: 1.0,
            a: None,
            b: None,
            truth_seed: 0,
            truth_range: [0.5, 1.0],
            init_range: [0.1, 0.4],
            learn_model: true,
            proposal: ProposalKind::Neural,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma_u2: f64,
    pub b: f64,
    pub sigma_v2: f64,
    pub prior_var: f64,
    pub init_alpha0: f64,
    pub init_b: f64,
    pub init_sigma_u2: f64,
    pub proposal: ProposalKind,
    pub hidden: usize,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            alpha1: 25.0,
            alpha2: 8.0,
            sigma_u2: 10.0,
            b: 0.05,
            sigma_v2: 1.0,
            prior_var: 5.0,
            init_alpha0: 0.3,
            init_b: 0.08,
            init_sigma_u2: 6.0,
            proposal: ProposalKind::Neural,
            hidden: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlamConfig {
    pub landmarks: usize,
    pub motion_var: f64,
    pub observation_var: f64,
    /// True landmarks are drawn uniformly from `[-arena, arena]^2`.
    pub arena: f64,
    pub truth_seed: u64,
    /// Variance of the Gaussian perturbation of initial landmark guesses.
    pub init_perturbation_var: f64,
    pub proposal: ProposalKind,
    pub hidden: usize,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            landmarks: 8,
            motion_var: 0.2,
            observation_var: 0.1,
            arena: 10.0,
            truth_seed: 0,
            init_perturbation_var: 4.0,
            proposal: ProposalKind::Neural,
            hidden: 64,
        }
    }
}

/// A model ready for learning: the wired [`Ssm`], the true model block used
/// for simulation and metrics, and how to initialise a learner.
#[derive(Debug)]
pub struct BuiltModel {
    pub ssm: Ssm,
    /// True model block (internal parameterisation).
    pub truth: Vec<f64>,
    /// A copy of the linear-Gaussian dynamics when the model has one, for
    /// exact Kalman comparisons.
    pub linear_gaussian: Option<LgssmModel>,
    init: InitRule,
}

#[derive(Debug, Clone)]
enum InitRule {
    Uniform([f64; 2]),
    Fixed(Vec<f64>),
    Perturb(f64),
}

impl BuiltModel {
    pub fn dynamics(&self) -> &dyn Dynamics {
        self.ssm.dynamics()
    }

    /// True model block on the natural scale.
    pub fn truth_natural(&self) -> Vec<f64> {
        self.dynamics().natural_params(&self.truth)
    }

    /// Initial parameter vector for a learner with the given run seed.
    pub fn initial_params(&self, streams: &Streams) -> Result<ParamVector> {
        let mut rng = streams.at(0, Role::ParameterInit);
        let model: Vec<f64> = match &self.init {
            InitRule::Uniform([lo, hi]) => (0..self.truth.len()).map(|_| rng.gen_range(*lo..*hi)).collect(),
            InitRule::Fixed(v) => v.clone(),
            InitRule::Perturb(var) => self
                .truth
                .iter()
                .map(|t| {
                    let z: f64 = rng.sample(StandardNormal);
                    t + var.sqrt() * z
                })
                .collect(),
        };
        let proposal = self.initial_proposal_params(&mut rng);
        ParamVector::from_blocks(&model, &proposal)
    }

    /// Parameter vector holding the true model block (proposal block freshly initialised).
    pub fn true_params(&self, streams: &Streams) -> Result<ParamVector> {
        let mut rng = streams.at(0, Role::ParameterInit);
        let proposal = self.initial_proposal_params(&mut rng);
        ParamVector::from_blocks(&self.truth, &proposal)
    }

    fn initial_proposal_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.ssm.proposal() {
            Proposal::Neural(head) => head.init_params(rng),
            _ => Vec::new(),
        }
    }
}

fn proposal_for(kind: ProposalKind, dynamics: &dyn Dynamics, hidden: usize) -> Result<Proposal> {
    Ok(match kind {
        ProposalKind::Bootstrap => Proposal::Bootstrap,
        ProposalKind::Optimal => Proposal::LocallyOptimal,
        ProposalKind::Neural => Proposal::Neural(GaussianProposalHead::new(
            dynamics.feature_dim(),
            dynamics.dim_x(),
            hidden,
        )?),
    })
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

/// Wires densities, scores and proposal for the configured model.
pub fn build_model(config: &ModelConfig) -> Result<BuiltModel> {
    match config {
        ModelConfig::Lgssm(c) => {
            if c.dim == 0 {
                return Err(Error::Config("lgssm dim must be positive".into()));
            }
            positive("process_noise", c.process_noise)?;
            positive("observation_noise", c.observation_noise)?;
            positive("prior_std", c.prior_std)?;
            let mut rng = Streams::new(c.truth_seed).at(0, Role::Truth);
            let mut draw = |given: &Option<Vec<f64>>| -> Result<Vec<f64>> {
                match given {
                    Some(v) if v.len() == c.dim => Ok(v.clone()),
                    Some(v) => Err(Error::Config(format!("expected {} diagonal entries, got {}", c.dim, v.len()))),
                    None => Ok((0..c.dim).map(|_| rng.gen_range(c.truth_range[0]..c.truth_range[1])).collect()),
                }
            };
            let a = draw(&c.a)?;
            let b = draw(&c.b)?;
            let su = vec![c.process_noise; c.dim];
            let sv = vec![c.observation_noise; c.dim];
            let prior = (vec![0.0; c.dim], vec![c.prior_std; c.dim]);
            let (dynamics, truth, init) = if c.learn_model {
                let m = LgssmModel::learnable(su, sv).with_prior(prior.0, prior.1);
                let truth = [a, b].concat();
                (m, truth, InitRule::Uniform(c.init_range))
            } else {
                let m = LgssmModel::fixed(a, b, su, sv).with_prior(prior.0, prior.1);
                (m, Vec::new(), InitRule::Fixed(Vec::new()))
            };
            let proposal = proposal_for(c.proposal, &dynamics, c.hidden)?;
            Ok(BuiltModel {
                linear_gaussian: Some(dynamics.clone()),
                ssm: Ssm::new(Box::new(dynamics), proposal)?,
                truth,
                init,
            })
        }
        ModelConfig::Growth(c) => {
            for (n, v) in [("sigma_u2", c.sigma_u2), ("sigma_v2", c.sigma_v2), ("prior_var", c.prior_var), ("init_sigma_u2", c.init_sigma_u2)] {
                positive(n, v)?;
            }
            let dynamics = GrowthModel {
                alpha1: c.alpha1,
                alpha2: c.alpha2,
                observation_std: c.sigma_v2.sqrt(),
                prior_std: c.prior_var.sqrt(),
            };
            let truth = GrowthModel::theta(c.alpha0, c.b, c.sigma_u2.sqrt());
            let init = InitRule::Fixed(GrowthModel::theta(c.init_alpha0, c.init_b, c.init_sigma_u2.sqrt()));
            let proposal = proposal_for(c.proposal, &dynamics, c.hidden)?;
            Ok(BuiltModel {
                ssm: Ssm::new(Box::new(dynamics), proposal)?,
                truth,
                linear_gaussian: None,
                init,
            })
        }
        ModelConfig::Slam(c) => {
            if c.landmarks == 0 {
                return Err(Error::Config("slam needs at least one landmark".into()));
            }
            positive("motion_var", c.motion_var)?;
            positive("observation_var", c.observation_var)?;
            positive("arena", c.arena)?;
            let dynamics = SlamModel::new(c.landmarks, c.motion_var, c.observation_var);
            let mut rng = Streams::new(c.truth_seed).at(0, Role::Truth);
            let truth = (0..2 * c.landmarks).map(|_| rng.gen_range(-c.arena..c.arena)).collect();
            let proposal = proposal_for(c.proposal, &dynamics, c.hidden)?;
            Ok(BuiltModel {
                ssm: Ssm::new(Box::new(dynamics), proposal)?,
                truth,
                linear_gaussian: None,
                init: InitRule::Perturb(c.init_perturbation_var),
            })
        }
    }
}
