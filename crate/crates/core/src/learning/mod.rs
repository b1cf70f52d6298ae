//! Online learners, their gradient estimators and the optimiser.

pub mod adam;
pub mod gradient;
pub mod learner;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use gradient::{osiwae_gradient, osiwae_terms, ovsmc_gradient, rml_gradient, rml_increment, CheckSummary, OsiwaeTerms};
pub use learner::{ovsmc_iteration, rml_iteration, smc_osiwae_iteration, Learner, LearnerConfig, LearnerKind};
