//! Online smoothing of the score statistic against the exact Kalman score.

use osiwae::harness::simulate::simulate;
use osiwae::filtering::ParticleCloud;
use osiwae::model::{Proposal, Ssm};
use osiwae::models::LgssmModel;
use osiwae::oracle::kalman_score;
use osiwae::params::ParamVector;
use osiwae::rng::Streams;
use osiwae::smoothing::{adasmooth_step, smoothed_expectation, Rule, SmoothingSchedule};

fn main() -> osiwae::Result<()> {
    let model = LgssmModel::learnable(vec![0.5], vec![1.0]);
    let trace = simulate(&model, &[0.8, 1.0], 50, 51)?;
    let theta_vals = [0.6, 1.2];
    let exact = kalman_score(&model, &theta_vals, &trace.values())?;
    println!("kalman score   ({:.3}, {:.3})", exact[0], exact[1]);

    let ssm = Ssm::new(Box::new(model), Proposal::Bootstrap)?;
    let theta = ParamVector::from_blocks(&theta_vals, &[])?;
    for (name, backward) in [("forward only", Rule::Never), ("every 5", Rule::EveryK(5)), ("always", Rule::Always)] {
        let schedule = SmoothingSchedule { backward, ..Default::default() };
        let ys = &trace.observations;
        let streams = Streams::new(9);
        let mut cloud = ParticleCloud::initialize(&ssm, &theta, &ys[0], 2_000, &streams)?;
        for y in &ys[1..] {
            cloud = adasmooth_step(&cloud, &ssm, &theta, y, &schedule, &streams)?;
        }
        let s = smoothed_expectation(&cloud)?;
        println!("{name:<14} ({:.3}, {:.3})", s[0], s[1]);
    }
    Ok(())
}
