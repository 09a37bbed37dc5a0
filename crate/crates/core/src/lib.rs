//! Fairness-constrained thresholds for conformal prediction sets.
//!
//! The pipeline: load a [`data::Dataset`], compute a [`scores::ScoreTable`],
//! pick a threshold with [`search::find_lambda_opt`] (or per-class with
//! [`search::find_classwise_lambdas`]), and check any threshold or set of
//! prediction sets with [`audit`].

pub mod audit;
pub mod cli;
pub mod conformal;
pub mod config;
pub mod data;
pub mod error;
pub mod gcp;
pub mod metrics;
pub mod report;
pub mod scores;
pub mod search;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
