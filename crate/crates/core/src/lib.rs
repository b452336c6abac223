//! Bayesian wavelet regression with adaptive recursive partitioning.
//!
//! Observations on a dyadic multi-dimensional grid are modeled as a 1D Haar
//! wavelet regression applied to an adaptively permuted vectorization of the
//! grid, where the permutation is induced by a recursive dyadic partition (RDP)
//! carrying a generative prior. The posterior over partitions is available in
//! closed form and is computed by message passing over the universe of
//! candidate partition blocks, whose cardinality is linear in the number of
//! locations. On top of the exact engine the crate provides posterior-mean
//! denoising, posterior tree sampling, Rao-Blackwellized estimation, cycle
//! spinning, energy-concentration analysis against fixed transforms, and a
//! sequential Monte Carlo extension for wavelet bases with longer support.

pub mod config;
pub mod energy;
pub mod engine;
pub mod error;
pub mod grid;
pub mod io;
pub mod math;
pub mod mean;
pub mod priors;
pub mod smc;
pub mod stats;
pub mod synth;
pub mod tree;

pub use error::{Result, WarpError};
pub use grid::{DyadicNode, Grid};
pub use priors::{HyperParams, SlabFamily};
pub use stats::{BlockStatsTable, Observation};
pub use tree::RdpTree;
