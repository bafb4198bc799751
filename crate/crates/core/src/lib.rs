//! Treatment-effect estimation with a representation split into a bias block
//! and an outcome block.
//!
//! An encoder maps covariates to a representation whose first `rep_dim_a`
//! columns are meant to absorb features that only drive treatment assignment.
//! Two outcome heads read the remaining columns. Training minimizes a weighted
//! factual loss plus a treated/control distribution distance on the outcome
//! block, an input reconstruction loss and a penalty on Pearson correlation
//! between the two blocks.
//!
//! Entry points:
//!
//! - [`synthetic`] generates the toy benchmark with known effects.
//! - [`data`] reads and writes realization files, splits and normalizes.
//! - [`trainer::fit_realization`] trains one realization.
//! - [`experiment::run_experiment`] runs a sweep and a full evaluation from an
//!   [`experiment::ExperimentConfig`] and writes JSON reports.
//! - [`evaluation`] holds the metrics and Welch's t-test.
//!
//! The `rsbnet` binary wraps the same functions; see [`cli`].

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod objective;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
