//! The experiment loop: stream observations through a learner, write
//! metrics at a fixed cadence, checkpoint, and record the outcome.
//!
//! An output directory holds `config.toml`, `stream.csv` (when the data are
//! simulated), `metrics.csv`, `checkpoint.bin`, `manifest.toml` and
//! `plot_metrics.py`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::Learner;
use crate::models::{build_model, BuiltModel};
use crate::oracle::{kalman_filter, GaussianBelief, LgssmParams};
use crate::params::ParamVector;
use crate::rng::Streams;

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::metrics::{mean_absolute_error, plot_script, MetricsRow, MetricsWriter};
use super::simulate::{read_stream, simulate, write_stream, Trace};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const STREAM_FILE: &str = "stream.csv";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint; metrics are appended.
    pub resume: Option<PathBuf>,
    /// Stop after consuming the observation with this time index.
    pub stop_at: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Stopped,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub learner: String,
    pub seed: u64,
    pub horizon: usize,
    /// Last time index consumed successfully.
    pub last_step: Option<usize>,
    pub failed_step: Option<usize>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))
    }

    fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub learner: Learner,
    pub rows: Vec<MetricsRow>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Observations for a run: from the configured stream file or simulated
/// under the true model block.
pub fn load_data(config: &ExperimentConfig, built: &BuiltModel) -> Result<Trace> {
    let trace = match &config.stream {
        Some(path) => read_stream(path)?,
        None => simulate(built.dynamics(), &built.truth, config.horizon, config.data_seed())?,
    };
    if trace.observations.len() < config.horizon {
        return Err(Error::Stream(format!(
            "stream has {} observations, horizon is {}",
            trace.observations.len(),
            config.horizon
        )));
    }
    if let Some(y) = trace.observations.first() {
        if y.values.len() != built.ssm.dim_y() {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: built.ssm.dim_y(),
                got: y.values.len(),
            });
        }
    }
    Ok(trace)
}

/// Kalman filtering means under the true parameters, when the model is
/// linear-Gaussian.
pub fn reference_means(built: &BuiltModel, trace: &Trace, horizon: usize) -> Result<Option<Vec<Vec<f64>>>> {
    let Some(lg) = &built.linear_gaussian else {
        return Ok(None);
    };
    let params = LgssmParams::from_model(lg, &built.truth);
    let var: Vec<f64> = lg.prior_std.iter().map(|s| s * s).collect();
    let prior = GaussianBelief::diagonal(&lg.prior_mean, &var);
    let ys: Vec<Vec<f64>> = trace.observations[..horizon].iter().map(|o| o.values.clone()).collect();
    Ok(Some(kalman_filter(&params, &prior, &ys)?.means))
}

fn metrics_row(
    config: &ExperimentConfig,
    built: &BuiltModel,
    truth_natural: &[f64],
    learner: &Learner,
    reference: Option<&[Vec<f64>]>,
    elapsed_ns: u64,
) -> Result<MetricsRow> {
    let cloud = learner.cloud.as_ref().expect("metrics follow an observation");
    let estimate = built.dynamics().natural_params(learner.theta.model());
    let filter_mse = match reference {
        Some(means) => {
            let m = cloud.mean()?;
            let k = &means[cloud.step()];
            Some(m.iter().zip(k).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m.len() as f64)
        }
        None => None,
    };
    Ok(MetricsRow {
        step: cloud.step(),
        learner: config.learner.name().to_string(),
        seed: config.seed,
        mae_model: mean_absolute_error(&estimate, truth_natural),
        filter_mse,
        ess: cloud.ess()?,
        wall_clock_ns: if config.output.wall_clock { elapsed_ns } else { 0 },
    })
}

/// Runs (or resumes) an experiment, writing into `config.output.dir`.
///
/// A failing step is recorded in the manifest before the error is returned;
/// the checkpoint then holds the last good state.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let dir = &config.output.dir;
    std::fs::create_dir_all(dir)?;
    let config_text = config.to_toml()?;
    let built = build_model(&config.model)?;
    let trace = load_data(config, &built)?;
    let reference = reference_means(&built, &trace, config.horizon)?;
    let truth_natural = built.truth_natural();

    let metrics_path = dir.join(METRICS_FILE);
    let (mut learner, mut writer) = match &options.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let saved = ck.config()?;
            if saved != *config {
                return Err(Error::Checkpoint("checkpoint was written under a different configuration".into()));
            }
            (ck.learner, MetricsWriter::append(&metrics_path)?)
        }
        None => {
            std::fs::write(dir.join("config.toml"), &config_text)?;
            if config.stream.is_none() {
                write_stream(&dir.join(STREAM_FILE), &trace)?;
            }
            std::fs::write(dir.join("plot_metrics.py"), plot_script(METRICS_FILE))?;
            let streams = Streams::new(config.seed);
            let theta: ParamVector = built.initial_params(&streams)?;
            let learner = Learner::new(config.learner, config.training.clone(), &built.ssm, theta, streams)?;
            (learner, MetricsWriter::create(&metrics_path)?)
        }
    };

    let mut manifest = RunManifest {
        status: RunStatus::Running,
        learner: config.learner.name().to_string(),
        seed: config.seed,
        horizon: config.horizon,
        last_step: learner.step(),
        failed_step: None,
        error: None,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    let save_checkpoint = |learner: &Learner| -> Result<()> {
        let ck = Checkpoint {
            config_text: config_text.clone(),
            learner: learner.clone(),
        };
        write_atomic(&dir.join(CHECKPOINT_FILE), &ck.to_bytes())
    };

    let start = learner.step().map_or(0, |s| s + 1);
    let end = options.stop_at.map_or(config.horizon, |s| (s + 1).min(config.horizon));
    let mut rows = Vec::new();
    for y in &trace.observations[start.min(end)..end] {
        let t = y.time_index;
        let clock = Instant::now();
        if let Err(e) = learner.observe(&built.ssm, y) {
            manifest.status = RunStatus::Failed;
            manifest.failed_step = Some(t);
            manifest.error = Some(e.to_string());
            writer.flush()?;
            save_checkpoint(&learner)?;
            manifest.save(&dir.join(MANIFEST_FILE))?;
            return Err(e);
        }
        let elapsed = clock.elapsed().as_nanos() as u64;
        manifest.last_step = Some(t);
        if t % config.output.metric_every == 0 || t + 1 == config.horizon {
            let row = metrics_row(config, &built, &truth_natural, &learner, reference.as_deref(), elapsed)?;
            writer.write(&row)?;
            rows.push(row);
        }
        if (t + 1) % config.output.checkpoint_every == 0 {
            writer.flush()?;
            save_checkpoint(&learner)?;
        }
    }
    writer.flush()?;
    save_checkpoint(&learner)?;
    manifest.status = if end == config.horizon { RunStatus::Completed } else { RunStatus::Stopped };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(RunOutcome { manifest, learner, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path) -> ExperimentConfig {
        let text = format!(
            r#"
seed = 7
horizon = 30
learner = "osiwae"

[model]
kind = "lgssm"
dim = 1
hidden = 4

[training]
particles = 16
m = 6
m_small = 2

[output]
dir = "{}"
metric_every = 4
checkpoint_every = 10
"#,
            dir.display()
        );
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn stop_and_resume_matches_uninterrupted_run() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let full = run_experiment(&config(a.path()), &RunOptions::default()).unwrap();
        assert_eq!(full.manifest.status, RunStatus::Completed);

        let cb = config(b.path());
        let first = run_experiment(&cb, &RunOptions { stop_at: Some(13), ..Default::default() }).unwrap();
        assert_eq!(first.manifest.status, RunStatus::Stopped);
        assert_eq!(first.manifest.last_step, Some(13));
        let resumed = run_experiment(
            &cb,
            &RunOptions {
                resume: Some(b.path().join(CHECKPOINT_FILE)),
                stop_at: None,
            },
        )
        .unwrap();
        assert_eq!(resumed.learner, full.learner);
        let ma = std::fs::read(a.path().join(METRICS_FILE)).unwrap();
        let mb = std::fs::read(b.path().join(METRICS_FILE)).unwrap();
        assert_eq!(ma, mb);
        assert!(full.rows.iter().all(|r| r.filter_mse.is_some()));
    }

    #[test]
    fn resume_under_other_config_is_rejected() {
        let a = tempfile::tempdir().unwrap();
        let c = config(a.path());
        run_experiment(&c, &RunOptions { stop_at: Some(3), ..Default::default() }).unwrap();
        let mut other = c.clone();
        other.seed = 8;
        let err = run_experiment(
            &other,
            &RunOptions {
                resume: Some(a.path().join(CHECKPOINT_FILE)),
                stop_at: None,
            },
        );
        assert!(matches!(err, Err(Error::Checkpoint(_))));
    }

    #[test]
    fn short_stream_is_rejected() {
        let a = tempfile::tempdir().unwrap();
        let mut c = config(a.path());
        let built = build_model(&c.model).unwrap();
        let trace = simulate(built.dynamics(), &built.truth, 5, 1).unwrap();
        let path = a.path().join("short.csv");
        write_stream(&path, &trace).unwrap();
        c.stream = Some(path);
        assert!(matches!(run_experiment(&c, &RunOptions::default()), Err(Error::Stream(_))));
    }
}
