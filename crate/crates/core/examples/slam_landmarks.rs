//! Landmark positions of a range-bearing model learned online from a robot's
//! noisy measurements.

use osiwae::harness::metrics::mean_absolute_error;
use osiwae::harness::simulate::simulate;
use osiwae::learning::{Learner, LearnerConfig, LearnerKind};
use osiwae::models::{build_model, ModelConfig, SlamConfig};
use osiwae::rng::Streams;

fn main() -> osiwae::Result<()> {
    let built = build_model(&ModelConfig::Slam(SlamConfig {
        landmarks: 4,
        hidden: 32,
        ..Default::default()
    }))?;
    let trace = simulate(built.dynamics(), &built.truth, 2_000, 5)?;
    let streams = Streams::new(2);
    let theta = built.initial_params(&streams)?;
    let config = LearnerConfig {
        particles: 100,
        m: 50,
        ..Default::default()
    };
    let mut learner = Learner::new(LearnerKind::Osiwae, config, &built.ssm, theta, streams)?;
    for y in &trace.observations {
        learner.observe(&built.ssm, y)?;
        if y.time_index % 250 == 0 {
            let mae = mean_absolute_error(learner.theta.model(), &built.truth);
            println!("step {:>5}: landmark MAE {mae:.3}", y.time_index);
        }
    }
    for (k, (est, truth)) in learner.theta.model().chunks(2).zip(built.truth.chunks(2)).enumerate() {
        println!("landmark {k}: ({:.2}, {:.2}) true ({:.2}, {:.2})", est[0], est[1], truth[0], truth[1]);
    }
    Ok(())
}
