//! Point configurations with prescribed limiting densities on compact sets.
//!
//! The core object is the nearest-neighbor truncated Riesz energy: each point
//! interacts only with its k nearest neighbors through the kernel
//! `w(x,y)·|x-y|^-s`, plus an external field term `N^(s/d)·Σ V(x)`. Minimizing
//! it over a compact set A produces well-separated point clouds whose
//! empirical measure approaches a prescribed density, at O(kN) cost per
//! energy or gradient evaluation.
//!
//! Module map:
//! - [`geometry`]: domains (box, flat torus, sphere, implicit surface) with
//!   metric, projection, sampling, and quadrature.
//! - [`neighbors`]: the exact k-nearest-neighbor graph with deterministic
//!   tie-breaking, plus a brute-force oracle.
//! - [`energy`]: truncated and full Riesz energies and their gradients.
//! - [`density`]: the equilibrium-density calculus linking weights, external
//!   fields, and limiting densities; asymptotic constants.
//! - [`optimize`]: projected gradient descent with backtracking and restarts.
//! - [`analysis`]: separation, covering, histogram, scaling, and bound checks.
//! - [`cli`]: the `rknn` batch front-end.
//!
//! Every operation is deterministic: samplers take explicit seeds and all
//! parallel reductions use a fixed association, so results are bit-identical
//! across worker counts.

pub mod analysis;
pub mod cli;
pub mod density;
pub mod energy;
mod error;
pub mod geometry;
pub mod neighbors;
pub mod optimize;
mod reduce;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
