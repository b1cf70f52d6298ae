//! End-to-end behaviour of the experiment harness: run directories, proposal
//! dumps and configuration errors.

use std::path::Path;

use osiwae::harness::checkpoint::Checkpoint;
use osiwae::harness::config::ExperimentConfig;
use osiwae::harness::dump::{linspace, proposal_density_dump, Probe, GROWTH_PROBE};
use osiwae::harness::run::{run_experiment, RunManifest, RunOptions, RunStatus, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE};
use osiwae::model::{normal_log_density, AuxNoise, Dynamics, Observation};
use osiwae::models::{build_model, GrowthModel};
use osiwae::Error;

fn config(dir: &Path, body: &str) -> ExperimentConfig {
    let text = format!("{body}\n[output]\ndir = \"{}\"\nmetric_every = 5\ncheckpoint_every = 10\n", dir.display());
    ExperimentConfig::from_toml(&text).unwrap()
}

const GROWTH: &str = r#"
seed = 3
horizon = 25
learner = "osiwae"

[model]
kind = "growth"

[training]
particles = 40
m = 10
m_small = 3
"#;

#[test]
fn fresh_run_writes_a_complete_directory() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), GROWTH);
    let outcome = run_experiment(&c, &RunOptions::default()).unwrap();
    for file in ["config.toml", "stream.csv", METRICS_FILE, CHECKPOINT_FILE, MANIFEST_FILE, "plot_metrics.py"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let manifest = RunManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.status, RunStatus::Completed);
    assert_eq!(manifest.last_step, Some(24));
    // rows at 0, 5, ..., 20 and the final step
    assert_eq!(outcome.rows.len(), 6);
    let metrics = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert!(metrics.starts_with("# schema=osiwae.metrics.v1\n"));
    // no Kalman reference for the growth model
    assert!(outcome.rows.iter().all(|r| r.filter_mse.is_none()));
}

#[test]
fn rml_on_a_proposal_only_model_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = "seed = 1\nhorizon = 10\nlearner = \"rml\"\n[model]\nkind = \"lgssm\"\ndim = 1\nhidden = 4\nlearn_model = false\n";
    let err = run_experiment(&config(dir.path(), body), &RunOptions::default());
    assert!(matches!(err, Err(Error::Config(_))), "{err:?}");
}

#[test]
fn dump_columns_follow_the_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), GROWTH);
    run_experiment(&c, &RunOptions::default()).unwrap();
    let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let built = build_model(&ck.config().unwrap().model).unwrap();
    let growth = GrowthModel::default();
    let centre = growth.drift(&built.truth, GROWTH_PROBE.x, GROWTH_PROBE.t);

    // prior column: Gaussian about the drift mean
    let offsets = linspace(0.25, 12.0, 48);
    let grid: Vec<f64> = offsets.iter().flat_map(|d| [centre - d, centre + d]).collect();
    let rows = proposal_density_dump(&ck, GROWTH_PROBE, &grid).unwrap();
    for pair in rows.chunks_exact(2) {
        assert!((pair[0].prior_logdensity - pair[1].prior_logdensity).abs() < 1e-12);
    }

    // learned column: the mode of the Gaussian is the noiseless proposal
    let theta = &ck.learner.theta;
    let y = Observation::new(vec![GROWTH_PROBE.y], GROWTH_PROBE.t).unwrap();
    let mean = built.ssm.propose(theta, &[GROWTH_PROBE.x], &y, &AuxNoise(vec![0.0])).unwrap()[0];
    let grid: Vec<f64> = (-40..=40).map(|k| mean + 0.05 * k as f64).collect();
    let rows = proposal_density_dump(&ck, GROWTH_PROBE, &grid).unwrap();
    let best = rows.iter().max_by(|a, b| a.learned_logdensity.total_cmp(&b.learned_logdensity)).unwrap();
    assert_eq!(best.x_next, mean);
}

#[test]
fn dump_needs_scalar_states() {
    let dir = tempfile::tempdir().unwrap();
    let body = "seed = 1\nhorizon = 3\nlearner = \"osiwae\"\n[model]\nkind = \"lgssm\"\ndim = 2\nhidden = 4\n[training]\nparticles = 8\nm = 3\nm_small = 2\n";
    run_experiment(&config(dir.path(), body), &RunOptions::default()).unwrap();
    let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let probe = Probe { x: 0.0, y: 0.0, t: 1 };
    assert!(matches!(proposal_density_dump(&ck, probe, &[0.0]), Err(Error::Config(_))));
}

#[test]
fn growth_transition_depends_on_time_only_through_the_cosine() {
    let growth = GrowthModel::default();
    let theta = GrowthModel::theta(0.5, 0.05, 10f64.sqrt());
    for t in [1usize, 2, 7, 18, 40] {
        for (x, xn) in [(0.1, 3.0), (-4.0, -1.0), (12.0, 9.5)] {
            let without_cos = 0.5 * x + 25.0 * x / (1.0 + x * x);
            let mean = without_cos + 8.0 * (1.2 * (t as f64 - 1.0)).cos();
            let direct = normal_log_density(xn, mean, 10.0);
            assert!((growth.log_transition(&theta, &[x], &[xn], t) - direct).abs() < 1e-12);
        }
    }
}
