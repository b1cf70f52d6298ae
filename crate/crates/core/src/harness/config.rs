//! Experiment configuration, read from a TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{LearnerConfig, LearnerKind};
use crate::models::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Number of observations streamed through the learner.
    pub horizon: usize,
    pub learner: LearnerKind,
    /// Seed of the simulated data; defaults to `seed`.
    #[serde(default)]
    pub data_seed: Option<u64>,
    /// Read observations from this stream file instead of simulating them.
    #[serde(default)]
    pub stream: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: LearnerConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a metrics row every this many steps.
    pub metric_every: usize,
    /// Write a checkpoint every this many steps (and always at the end).
    pub checkpoint_every: usize,
    /// Record wall-clock time per row. Off by default so metrics files are
    /// byte-reproducible.
    pub wall_clock: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("run"),
            metric_every: 10,
            checkpoint_every: 5000,
            wall_clock: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.output.metric_every < 1 || self.output.checkpoint_every < 1 {
            return Err(Error::Config("metric and checkpoint cadences must be at least 1".into()));
        }
        self.training.validate()
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }
}
