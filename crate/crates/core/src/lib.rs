//! Simulation and analysis of distributed stochastic composite optimization
//! over time-varying networks with noisy links.
//!
//! Two methods are provided: a composite mirror-descent method that mixes
//! primal iterates, and a composite dual-averaging method that mixes dual
//! accumulators. Both receive noise-corrupted neighbor messages whose scale
//! decays as a power of the iteration counter.

pub mod algorithms;
pub mod config;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod harness;
pub mod network;
pub mod noise;
pub mod output;
pub mod problem;
pub mod rng;
pub mod vector;

pub use error::{Error, Result};
