//! The online learners: one iteration per incoming observation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::ParticleCloud;
use crate::model::{Observation, Ssm};
use crate::params::{Blocks, GradientEstimate, ParamVector};
use crate::rng::{Role, Streams};
use crate::smoothing::{adasmooth_step, smoothed_expectation, SmoothingSchedule};

use super::adam::{adam_step, AdamConfig, OptimizerState};
use super::gradient::{osiwae_terms, rml_increment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Osiwae,
    Rml,
    Ovsmc,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Osiwae => "osiwae",
            LearnerKind::Rml => "rml",
            LearnerKind::Ovsmc => "ovsmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// Number of particles `N`.
    pub particles: usize,
    /// Importance samples for the model-block pass.
    pub m: usize,
    /// Importance samples for the proposal-block pass.
    pub m_small: usize,
    pub schedule: SmoothingSchedule,
    pub adam: AdamConfig,
    /// Per-block gradient norm cap; `0` disables clipping.
    pub clip: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            particles: 200,
            m: 200,
            m_small: 5,
            schedule: SmoothingSchedule::default(),
            adam: AdamConfig::default(),
            clip: 1e3,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::Config(format!("need N >= 2 particles, got {}", self.particles)));
        }
        if self.m < 2 {
            return Err(Error::Config(format!("need M >= 2, got {}", self.m)));
        }
        if self.m_small < 1 {
            return Err(Error::Config("need M_small >= 1".into()));
        }
        if !(self.clip >= 0.0) {
            return Err(Error::Config(format!("clip must be nonnegative, got {}", self.clip)));
        }
        self.schedule.validate()
    }

    fn clip(&self, g: &mut GradientEstimate) {
        if self.clip > 0.0 {
            g.clip_block_norms(self.clip);
        }
    }
}

/// One importance-weighted iteration: proposal pass with `M_small`, model
/// pass with `M`, then the smoothing step under the updated parameters.
/// With `drop_score` the score-statistic term is omitted (the OVSMC variant).
#[allow(clippy::too_many_arguments)]
fn iwae_iteration(
    cloud: &ParticleCloud,
    ssm: &Ssm,
    theta: &mut ParamVector,
    optimizer: &mut OptimizerState,
    y: &Observation,
    config: &LearnerConfig,
    streams: &Streams,
    drop_score: bool,
) -> Result<ParticleCloud> {
    let step = y.time_index as u64;
    let nonempty = theta.layout().nonempty();
    let passes = [
        (nonempty.proposal, Blocks::PROPOSAL, config.m_small, Role::ProposalChecks),
        (nonempty.model, Blocks::MODEL, config.m, Role::ModelChecks),
    ];
    for (active, blocks, m, role) in passes {
        if !active {
            continue;
        }
        let mut rng = streams.at(step, role);
        let terms = osiwae_terms(cloud, ssm, theta, y, m, cloud.len(), blocks, &mut rng)?;
        let mut g = if drop_score { terms.without_score()? } else { terms.with_score()? };
        config.clip(&mut g);
        adam_step(optimizer, &g, theta)?;
    }
    adasmooth_step(cloud, ssm, theta, y, &config.schedule, streams)
}

/// One SMC-OSIWAE iteration; returns the cloud at the step of `y`.
pub fn smc_osiwae_iteration(
    cloud: &ParticleCloud,
    ssm: &Ssm,
    theta: &mut ParamVector,
    optimizer: &mut OptimizerState,
    y: &Observation,
    config: &LearnerConfig,
    streams: &Streams,
) -> Result<ParticleCloud> {
    iwae_iteration(cloud, ssm, theta, optimizer, y, config, streams, false)
}

/// One OVSMC-style iteration: as [`smc_osiwae_iteration`] without the
/// score-statistic term.
pub fn ovsmc_iteration(
    cloud: &ParticleCloud,
    ssm: &Ssm,
    theta: &mut ParamVector,
    optimizer: &mut OptimizerState,
    y: &Observation,
    config: &LearnerConfig,
    streams: &Streams,
) -> Result<ParticleCloud> {
    iwae_iteration(cloud, ssm, theta, optimizer, y, config, streams, true)
}

/// One particle RML iteration. `previous` holds the smoothed score of the
/// cloud before `cloud` and is advanced in place.
#[allow(clippy::too_many_arguments)]
pub fn rml_iteration(
    cloud: &ParticleCloud,
    previous: &mut Vec<f64>,
    ssm: &Ssm,
    theta: &mut ParamVector,
    optimizer: &mut OptimizerState,
    y: &Observation,
    config: &LearnerConfig,
    streams: &Streams,
) -> Result<ParticleCloud> {
    let mut g = rml_increment(previous, cloud, theta.layout())?;
    *previous = smoothed_expectation(cloud)?;
    config.clip(&mut g);
    adam_step(optimizer, &g, theta)?;
    adasmooth_step(cloud, ssm, theta, y, &config.schedule, streams)
}

/// Everything a learner carries between observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub kind: LearnerKind,
    pub config: LearnerConfig,
    pub theta: ParamVector,
    pub optimizer: OptimizerState,
    pub cloud: Option<ParticleCloud>,
    /// Smoothed score of the previous cloud (RML only).
    pub previous_score: Vec<f64>,
    pub streams: Streams,
}

impl Learner {
    pub fn new(kind: LearnerKind, config: LearnerConfig, ssm: &Ssm, theta: ParamVector, streams: Streams) -> Result<Self> {
        config.validate()?;
        let layout = ssm.layout();
        if theta.layout() != layout {
            return Err(Error::DimensionMismatch {
                what: "initial parameters",
                expected: layout.len(),
                got: theta.len(),
            });
        }
        if layout.is_empty() {
            return Err(Error::Config("the model has no learnable parameters".into()));
        }
        if kind == LearnerKind::Rml && layout.model_len == 0 {
            return Err(Error::Config("rml learns only model parameters and this model has none".into()));
        }
        Ok(Self {
            kind,
            optimizer: OptimizerState::new(config.adam, layout),
            config,
            previous_score: vec![0.0; layout.model_len],
            theta,
            cloud: None,
            streams,
        })
    }

    /// Consumes the next observation.
    pub fn observe(&mut self, ssm: &Ssm, y: &Observation) -> Result<()> {
        let next = match &self.cloud {
            None => ParticleCloud::initialize(ssm, &self.theta, y, self.config.particles, &self.streams)?,
            Some(cloud) => {
                if y.time_index != cloud.step() + 1 {
                    return Err(Error::Stream(format!(
                        "expected observation {} but got {}",
                        cloud.step() + 1,
                        y.time_index
                    )));
                }
                let (theta, opt, cfg, streams) = (&mut self.theta, &mut self.optimizer, &self.config, &self.streams);
                match self.kind {
                    LearnerKind::Osiwae => smc_osiwae_iteration(cloud, ssm, theta, opt, y, cfg, streams)?,
                    LearnerKind::Ovsmc => ovsmc_iteration(cloud, ssm, theta, opt, y, cfg, streams)?,
                    LearnerKind::Rml => rml_iteration(cloud, &mut self.previous_score, ssm, theta, opt, y, cfg, streams)?,
                }
            }
        };
        self.cloud = Some(next);
        Ok(())
    }

    /// Time index of the last observation consumed.
    pub fn step(&self) -> Option<usize> {
        self.cloud.as_ref().map(ParticleCloud::step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Proposal;
    use crate::models::LgssmModel;
    use crate::neural::GaussianProposalHead;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn observations(n: usize) -> Vec<Observation> {
        (0..n)
            .map(|t| Observation::new(vec![(t as f64 * 0.7).sin()], t).unwrap())
            .collect()
    }

    fn small_config() -> LearnerConfig {
        LearnerConfig {
            particles: 16,
            m: 8,
            m_small: 3,
            ..Default::default()
        }
    }

    fn neural_lgssm(learn_model: bool) -> (Ssm, ParamVector) {
        let head = GaussianProposalHead::new(2, 1, 8).unwrap();
        let dynamics = if learn_model {
            LgssmModel::learnable(vec![0.5], vec![0.5])
        } else {
            LgssmModel::fixed(vec![0.8], vec![1.0], vec![0.5], vec![0.5])
        };
        let ssm = Ssm::new(Box::new(dynamics), Proposal::Neural(head.clone())).unwrap();
        let model: &[f64] = if learn_model { &[0.3, 0.6] } else { &[] };
        let theta = ParamVector::from_blocks(model, &head.init_params(&mut ChaCha8Rng::seed_from_u64(2))).unwrap();
        (ssm, theta)
    }

    #[test]
    fn iteration_is_reproducible() {
        let (ssm, theta) = neural_lgssm(true);
        let run = || {
            let mut l = Learner::new(LearnerKind::Osiwae, small_config(), &ssm, theta.clone(), Streams::new(5)).unwrap();
            for y in observations(12) {
                l.observe(&ssm, &y).unwrap();
            }
            l
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn proposal_only_model_runs_single_pass() {
        let (ssm, theta) = neural_lgssm(false);
        let mut l = Learner::new(LearnerKind::Osiwae, small_config(), &ssm, theta.clone(), Streams::new(1)).unwrap();
        for y in observations(6) {
            l.observe(&ssm, &y).unwrap();
        }
        assert_eq!(l.optimizer.steps, [0, 5]);
        assert_ne!(l.theta, theta);
    }

    #[test]
    fn rml_rejects_proposal_only_model() {
        let (ssm, theta) = neural_lgssm(false);
        assert!(matches!(
            Learner::new(LearnerKind::Rml, small_config(), &ssm, theta, Streams::new(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rml_never_touches_proposal_block() {
        let (ssm, theta) = neural_lgssm(true);
        let mut l = Learner::new(LearnerKind::Rml, small_config(), &ssm, theta.clone(), Streams::new(3)).unwrap();
        for y in observations(10) {
            l.observe(&ssm, &y).unwrap();
        }
        assert_eq!(l.theta.proposal(), theta.proposal());
        assert_ne!(l.theta.model(), theta.model());
    }

    #[test]
    fn nothing_to_learn_is_rejected() {
        let ssm = Ssm::new(Box::new(LgssmModel::fixed(vec![0.8], vec![1.0], vec![0.5], vec![0.5])), Proposal::Bootstrap).unwrap();
        let theta = ParamVector::from_blocks(&[], &[]).unwrap();
        assert!(matches!(
            Learner::new(LearnerKind::Osiwae, small_config(), &ssm, theta, Streams::new(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn out_of_order_observation_is_rejected() {
        let (ssm, theta) = neural_lgssm(true);
        let mut l = Learner::new(LearnerKind::Ovsmc, small_config(), &ssm, theta, Streams::new(3)).unwrap();
        let ys = observations(3);
        l.observe(&ssm, &ys[0]).unwrap();
        assert!(matches!(l.observe(&ssm, &ys[2]), Err(Error::Stream(_))));
    }

    #[test]
    fn config_validation() {
        assert!(LearnerConfig { particles: 1, ..Default::default() }.validate().is_err());
        assert!(LearnerConfig { m: 1, ..Default::default() }.validate().is_err());
        assert!(LearnerConfig { m_small: 0, ..Default::default() }.validate().is_err());
        assert!(LearnerConfig::default().validate().is_ok());
    }
}
