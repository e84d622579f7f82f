//! Bayesian sparse regression of a partially observed, left-censored outcome
//! on compositional predictors.
//!
//! The model couples a z-prior (approximate zero-sum) spike-and-slab
//! regression with an Ising prior over inclusion indicators, and imputes
//! missing outcomes under a mixed missing-not-at-random (below a limit of
//! detection) / missing-at-random mechanism. Everything is fitted by a single
//! Gibbs sampler; see [`sampler::run_chain`].

pub mod benchmark;
pub mod cli;
pub mod collapsed;
pub mod config;
pub mod distributions;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod simulation;

pub use error::{Error, Result};
