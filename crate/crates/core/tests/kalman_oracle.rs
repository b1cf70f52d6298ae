//! Self-consistency of the Kalman oracle used as ground truth elsewhere.

use osiwae::harness::simulate::simulate;
use osiwae::models::LgssmModel;
use osiwae::oracle::{exact_likfunc_lgssm, kalman_filter, kalman_score_with_step, kalman_step, GaussianBelief, LgssmParams};

fn model() -> LgssmModel {
    LgssmModel::learnable(vec![0.7, 0.4], vec![0.5, 0.9])
}

const TRUTH: [f64; 4] = [0.8, 0.6, 1.0, 0.7];

fn prior(m: &LgssmModel) -> GaussianBelief {
    let var: Vec<f64> = m.prior_std.iter().map(|s| s * s).collect();
    GaussianBelief::diagonal(&m.prior_mean, &var)
}

#[test]
fn score_agrees_across_step_sizes() {
    let m = model();
    let ys = simulate(&m, &TRUTH, 200, 3).unwrap().values();
    let theta = [0.7, 0.5, 1.2, 0.6];
    let coarse = kalman_score_with_step(&m, &theta, &ys, 1e-5).unwrap();
    let fine = kalman_score_with_step(&m, &theta, &ys, 1e-6).unwrap();
    for (c, f) in coarse.iter().zip(&fine) {
        assert!((c - f).abs() <= 1e-4 * f.abs().max(1.0), "{c} vs {f}");
    }
}

/// Per-step score contributions by central differences of the increments.
fn score_increments(m: &LgssmModel, theta: &[f64], ys: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            probe[k] = theta[k] + h;
            let up = kalman_filter(&LgssmParams::from_model(m, &probe), &prior(m), ys).unwrap().increments;
            probe[k] = theta[k] - h;
            let down = kalman_filter(&LgssmParams::from_model(m, &probe), &prior(m), ys).unwrap().increments;
            probe[k] = theta[k];
            up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect()
        })
        .collect()
}

#[test]
fn score_per_step_vanishes_at_the_truth() {
    let m = model();
    let horizon = 10_000;
    let ys = simulate(&m, &TRUTH, horizon, 11).unwrap().values();
    for (k, inc) in score_increments(&m, &TRUTH, &ys, 1e-6).iter().enumerate() {
        let t = horizon as f64;
        let mean = inc.iter().sum::<f64>() / t;
        let se = (inc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0)).sqrt() / t.sqrt();
        assert!(mean.abs() < 3.0 * se, "coordinate {k}: score/T {mean} with SE {se}");
    }
}

#[test]
fn predictive_density_is_the_filter_increment() {
    let m = model();
    let params = LgssmParams::from_model(&m, &TRUTH);
    let ys = simulate(&m, &TRUTH, 50, 2).unwrap().values();
    let mut belief = prior(&m);
    for y in &ys[1..] {
        let exact = exact_likfunc_lgssm(&belief, &params, y).unwrap();
        let (next, inc) = kalman_step(&belief, &params, y).unwrap();
        assert!((exact - inc).abs() < 1e-12, "{exact} vs {inc}");
        belief = next;
    }
}

#[test]
fn running_average_of_increments_settles() {
    let m = model();
    let ys = simulate(&m, &TRUTH, 20_000, 8).unwrap().values();
    let inc = kalman_filter(&LgssmParams::from_model(&m, &TRUTH), &prior(&m), &ys).unwrap().increments;
    let (a, b) = inc[100..].split_at((inc.len() - 100) / 2);
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n)
    };
    let ((ma, va), (mb, vb)) = (stats(a), stats(b));
    assert!(va.is_finite() && vb.is_finite());
    assert!((ma - mb).abs() < 4.0 * (va + vb).sqrt(), "{ma} vs {mb}");
}
