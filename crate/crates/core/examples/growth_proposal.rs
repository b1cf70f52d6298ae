//! A neural proposal for the nonlinear growth model, compared with the
//! optimal kernel at the probe point after a short training run.

use osiwae::filtering::ParticleCloud;
use osiwae::harness::checkpoint::Checkpoint;
use osiwae::harness::dump::{linspace, proposal_density_dump, GROWTH_PROBE};
use osiwae::harness::simulate::simulate;
use osiwae::learning::{Learner, LearnerConfig, LearnerKind};
use osiwae::models::{build_model, GrowthConfig, ModelConfig};
use osiwae::oracle::grid_modes;
use osiwae::rng::Streams;

fn main() -> osiwae::Result<()> {
    let config_text = "seed = 7\nhorizon = 2000\nlearner = \"osiwae\"\n[model]\nkind = \"growth\"\n[training]\nparticles = 200\nm = 100\n";
    let config = osiwae::harness::config::ExperimentConfig::from_toml(config_text)?;
    let built = build_model(&ModelConfig::Growth(GrowthConfig::default()))?;
    let trace = simulate(built.dynamics(), &built.truth, config.horizon, 71)?;
    let streams = Streams::new(config.seed);
    let theta = built.initial_params(&streams)?;
    let training: LearnerConfig = config.training.clone();
    let mut learner = Learner::new(LearnerKind::Osiwae, training, &built.ssm, theta, streams)?;
    for y in &trace.observations {
        learner.observe(&built.ssm, y)?;
    }
    let ess = learner.cloud.as_ref().map(ParticleCloud::ess).transpose()?;
    println!("learned model block {:?}, final ESS {:?}", built.dynamics().natural_params(learner.theta.model()), ess);

    let checkpoint = Checkpoint {
        config_text: config_text.into(),
        learner,
    };
    let grid = linspace(-25.0, 25.0, 501);
    let rows = proposal_density_dump(&checkpoint, GROWTH_PROBE, &grid)?;
    let learned: Vec<f64> = rows.iter().map(|r| r.learned_logdensity).collect();
    let optimal: Vec<f64> = rows.iter().map(|r| r.optimal_logdensity_unnormalized).collect();
    let prior: Vec<f64> = rows.iter().map(|r| r.prior_logdensity).collect();
    for (name, values) in [("learned", &learned), ("optimal", &optimal), ("prior", &prior)] {
        let modes: Vec<String> = grid_modes(&grid, values).iter().take(2).map(|m| format!("{:.2}", m.0)).collect();
        println!("{name:<8} modes {}", modes.join(", "));
    }
    Ok(())
}
