//! A bootstrap particle filter tracks the exact Kalman filter on a scalar
//! linear-Gaussian model.

use osiwae::filtering::ParticleCloud;
use osiwae::harness::simulate::simulate;
use osiwae::model::{Proposal, Ssm};
use osiwae::models::LgssmModel;
use osiwae::oracle::{kalman_filter, GaussianBelief, LgssmParams};
use osiwae::params::ParamVector;
use osiwae::rng::Streams;
use osiwae::smoothing::{adasmooth_step, SmoothingSchedule};

fn main() -> osiwae::Result<()> {
    let model = LgssmModel::fixed(vec![0.9], vec![1.0], vec![0.5], vec![0.5]);
    let trace = simulate(&model, &[], 200, 3)?;
    let prior = GaussianBelief::diagonal(&model.prior_mean, &[model.prior_std[0].powi(2)]);
    let kalman = kalman_filter(&LgssmParams::from_model(&model, &[]), &prior, &trace.values())?;
    println!("exact log-likelihood {:.4}", kalman.log_likelihood);

    let ssm = Ssm::new(Box::new(model), Proposal::Bootstrap)?;
    let theta = ParamVector::from_blocks(&[], &[])?;
    let streams = Streams::new(1);
    let schedule = SmoothingSchedule::default();
    for n in [100, 1_000, 10_000] {
        let ys = &trace.observations;
        let mut cloud = ParticleCloud::initialize(&ssm, &theta, &ys[0], n, &streams)?;
        let mut sq = (cloud.mean()?[0] - kalman.means[0][0]).powi(2);
        for y in &ys[1..] {
            cloud = adasmooth_step(&cloud, &ssm, &theta, y, &schedule, &streams)?;
            sq += (cloud.mean()?[0] - kalman.means[y.time_index][0]).powi(2);
        }
        println!("N = {n:>6}: rms error of the filter mean {:.2e}", (sq / ys.len() as f64).sqrt());
    }
    Ok(())
}
