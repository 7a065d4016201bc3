//! Particle Thompson sampling with regeneration.
//!
//! The crate implements stochastic-bandit environments with finite particle
//! approximations of the posterior, exact Thompson-sampling baselines, the
//! drift/divergence machinery that explains which particles survive, a
//! contextual network-slicing application, and a reproducible experiment
//! harness.

pub mod bandit;
pub mod error;
pub mod harness;
pub mod netslice;
pub mod rng;
pub mod samplers;
pub mod survival;

pub use error::{Error, Result};
