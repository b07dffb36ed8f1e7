//! LQG feedback coding for the k-receiver Gaussian broadcast channel.
//!
//! - [`numerics`]: complex matrices, DFT/circulant construction, covariance square roots and
//!   seeded Gaussian sampling.
//! - [`lqg`]: Riccati and Lyapunov solvers and the asymptotic power of the optimal control.
//! - [`codes`]: encoder/decoder recursions (point-to-point, broadcast, Ozarow–Leung) and
//!   discrete message grids.
//! - [`simulator`]: closed-loop trials and reproducible parallel ensembles.
//! - [`analysis`]: sum-rate power gain, MAC duality and pre-log experiments.

// `!(x > 1.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod codes;
pub mod lqg;
pub mod numerics;
pub mod simulator;
