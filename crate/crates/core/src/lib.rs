//! Online variational learning for state-space models with sequential Monte
//! Carlo: SMC-OSIWAE, particle RML and an OVSMC-style baseline, together with
//! exact oracles and an experiment harness.

pub mod error;
pub mod filtering;
pub mod harness;
pub mod learning;
pub mod model;
pub mod models;
pub mod neural;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod smoothing;

pub use error::{Error, Result};
