//! The importance-weighted bound tightens towards the exact one-step
//! log-likelihood as the number of samples grows.

use osiwae::model::{Observation, Proposal, Ssm};
use osiwae::models::LgssmModel;
use osiwae::oracle::{exact_likfunc_lgssm, mc_colbo, FilterLaw, GaussianBelief, LgssmParams};
use osiwae::params::ParamVector;
use osiwae::rng::Streams;

fn main() -> osiwae::Result<()> {
    let model = LgssmModel::fixed(vec![0.8], vec![1.0], vec![1.0], vec![0.5]);
    let params = LgssmParams::from_model(&model, &[]);
    let belief = GaussianBelief::diagonal(&[0.5], &[1.0]);
    let y = Observation::new(vec![2.0], 1)?;
    let exact = exact_likfunc_lgssm(&belief, &params, &y.values)?;

    let theta = ParamVector::from_blocks(&[], &[])?;
    for proposal in [Proposal::Bootstrap, Proposal::LocallyOptimal] {
        let label = format!("{proposal:?}");
        let ssm = Ssm::new(Box::new(model.clone()), proposal)?;
        println!("{label} proposal, exact {exact:.4}");
        for m in [1, 2, 4, 8, 16, 32] {
            let (bound, se) = mc_colbo(&ssm, &theta, FilterLaw::Belief(&belief), &y, m, 20_000, &Streams::new(m as u64))?;
            println!("  M = {m:>2}: {bound:.4} +- {se:.4}  gap {:.4}", exact - bound);
        }
    }
    Ok(())
}
