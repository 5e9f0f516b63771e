//! Stochastic variational inference with score-function gradients.
//!
//! Three ways of spending Monte Carlo effort per iteration are provided:
//! plain Monte Carlo (`mcvi`), randomized quasi-Monte Carlo (`qmcvi`), and
//! single-draw acceptance sampling (`yoasovi`), where a draw is kept only if
//! its ELBO estimate passes a tempered accept/reject test against the last
//! accepted estimate.
//!
//! The crate is organised bottom-up:
//!
//! - [`sequences`]: uniform / low-discrepancy point streams and the Gaussian transform
//! - [`model`]: the diagonal Gaussian mixture model, data simulation and CSV loading
//! - [`family`]: the mean-field Gaussian variational family over unconstrained parameters
//! - [`estimators`]: the joint gradient / ELBO estimator and the update step
//! - [`acceptance`]: accept/reject rules, temperature schedules and the patience counter
//! - [`driver`]: the optimisation loop for every method
//! - [`harness`]: experiment matrices, trace files and summaries
//! - [`validation`]: numerical oracles used by the test-suite

pub mod acceptance;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod family;
pub mod harness;
pub mod model;
pub mod par;
pub mod sequences;
pub mod validation;

pub use error::{Error, Result};
