//! Experiment plumbing: configuration, simulated streams, metrics,
//! checkpoints and the run loop.

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod dump;
pub mod metrics;
pub mod run;
pub mod simulate;
