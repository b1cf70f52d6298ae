//! Binary checkpoints of a learner.
//!
//! All integers and floats are little-endian; `vec` means a `u64` length
//! followed by that many `f64`.
//!
//! ```text
//! magic     8 bytes  "OSIWAECK"
//! version   u32      1
//! config    u64 length + UTF-8 TOML text of the experiment
//! seed      u64
//! learner   u8       0 osiwae, 1 rml, 2 ovsmc
//! layout    u64 model_len, u64 proposal_len
//! theta     f64 * (model_len + proposal_len)
//! adam      vec first moments, vec second moments, u64 model steps, u64 proposal steps
//! cloud     u8 present; if 1: u64 n, u64 dim_x, u64 stat_dim, u64 step,
//!           f64 * n*dim_x particles, f64 * n log weights, f64 * n*stat_dim statistics
//! previous  vec smoothed score of the previous cloud (RML)
//! ```
//!
//! Random streams are counter-based, so the seed and the cloud step are the
//! whole RNG state.

use std::path::Path;

use crate::error::{Error, Result};
use crate::filtering::ParticleCloud;
use crate::learning::{Learner, LearnerKind, OptimizerState};
use crate::params::{ParamLayout, ParamVector};
use crate::rng::Streams;

use super::config::ExperimentConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OSIWAECK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub learner: Learner,
}

impl Checkpoint {
    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(&self.config_text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let l = &self.learner;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u64(&mut out, self.config_text.len() as u64);
        out.extend_from_slice(self.config_text.as_bytes());
        put_u64(&mut out, l.streams.seed());
        out.push(match l.kind {
            LearnerKind::Osiwae => 0,
            LearnerKind::Rml => 1,
            LearnerKind::Ovsmc => 2,
        });
        let layout = l.theta.layout();
        put_u64(&mut out, layout.model_len as u64);
        put_u64(&mut out, layout.proposal_len as u64);
        put_f64s(&mut out, l.theta.values());
        put_vec(&mut out, &l.optimizer.first);
        put_vec(&mut out, &l.optimizer.second);
        put_u64(&mut out, l.optimizer.steps[0]);
        put_u64(&mut out, l.optimizer.steps[1]);
        match &l.cloud {
            None => out.push(0),
            Some(c) => {
                out.push(1);
                put_u64(&mut out, c.len() as u64);
                put_u64(&mut out, c.dim_x() as u64);
                put_u64(&mut out, c.stat_dim() as u64);
                put_u64(&mut out, c.step() as u64);
                put_f64s(&mut out, c.particles());
                put_f64s(&mut out, c.log_weights());
                put_f64s(&mut out, c.statistics());
            }
        }
        put_vec(&mut out, &l.previous_score);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let text_len = r.len()?;
        let config_text = String::from_utf8(r.take(text_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
        let config = ExperimentConfig::from_toml(&config_text)?;
        let seed = r.u64()?;
        let kind = match r.take(1)?[0] {
            0 => LearnerKind::Osiwae,
            1 => LearnerKind::Rml,
            2 => LearnerKind::Ovsmc,
            k => return Err(Error::Checkpoint(format!("unknown learner tag {k}"))),
        };
        let layout = ParamLayout::new(r.len()?, r.len()?)?;
        let theta = ParamVector::new(r.f64s(layout.len())?, layout)?;
        let first = r.vec()?;
        let second = r.vec()?;
        let steps = [r.u64()?, r.u64()?];
        if first.len() != layout.len() || second.len() != layout.len() {
            return Err(Error::Checkpoint("optimizer moments do not match the layout".into()));
        }
        let optimizer = OptimizerState {
            config: config.training.adam,
            first,
            second,
            steps,
        };
        let cloud = match r.take(1)?[0] {
            0 => None,
            1 => {
                let (n, dx, p, step) = (r.len()?, r.len()?, r.len()?, r.len()?);
                let particles = r.f64s(n * dx)?;
                let log_weights = r.f64s(n)?;
                let statistics = r.f64s(n * p)?;
                Some(ParticleCloud::new(particles, dx, log_weights, statistics, p, step)?)
            }
            k => return Err(Error::Checkpoint(format!("bad cloud flag {k}"))),
        };
        let previous_score = r.vec()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config_text,
            learner: Learner {
                kind,
                config: config.training,
                theta,
                optimizer,
                cloud,
                previous_score,
                streams: Streams::new(seed),
            },
        })
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_vec(out: &mut Vec<u8>, values: &[f64]) {
    put_u64(out, values.len() as u64);
    put_f64s(out, values);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        self.f64s(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        assert!(matches!(Checkpoint::from_bytes(b"OSIWAE"), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(b"NOTMAGIC\x01\0\0\0"), Err(Error::Checkpoint(_))));
        let mut v = CHECKPOINT_MAGIC.to_vec();
        v.extend_from_slice(&7u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::Checkpoint(_))));
    }
}
