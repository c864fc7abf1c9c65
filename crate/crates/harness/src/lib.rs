//! Experiment harness: configuration, baselines, Monte-Carlo runs and
//! plot-ready exports.

pub mod baselines;
pub mod config;
pub mod experiment;
pub mod plots;
