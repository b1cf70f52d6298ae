//! Online learning of a two-dimensional linear-Gaussian model with the three
//! learners, starting from the same parameters.

use osiwae::harness::metrics::mean_absolute_error;
use osiwae::harness::simulate::simulate;
use osiwae::learning::{Learner, LearnerConfig, LearnerKind};
use osiwae::models::{build_model, LgssmConfig, ModelConfig, ProposalKind};
use osiwae::rng::Streams;

fn main() -> osiwae::Result<()> {
    let horizon = 3_000;
    let config = LearnerConfig {
        particles: 100,
        m: 100,
        ..Default::default()
    };
    for kind in [LearnerKind::Osiwae, LearnerKind::Ovsmc, LearnerKind::Rml] {
        let proposal = if kind == LearnerKind::Rml { ProposalKind::Bootstrap } else { ProposalKind::Neural };
        let built = build_model(&ModelConfig::Lgssm(LgssmConfig {
            dim: 2,
            hidden: 32,
            proposal,
            ..Default::default()
        }))?;
        let trace = simulate(built.dynamics(), &built.truth, horizon, 100)?;
        let streams = Streams::new(0);
        let theta = built.initial_params(&streams)?;
        let mut learner = Learner::new(kind, config.clone(), &built.ssm, theta, streams)?;
        print!("{:<7}", kind.name());
        for y in &trace.observations {
            learner.observe(&built.ssm, y)?;
            if y.time_index % 500 == 0 {
                print!(" {:.3}", mean_absolute_error(learner.theta.model(), &built.truth));
            }
        }
        println!("  final {:?}", learner.theta.model());
    }
    Ok(())
}
