//! Distributionally robust probabilistic reachable sets and indirect-feedback
//! stochastic MPC for linear systems with additive noise.
//!
//! The crate is `no_std` (it needs `alloc`). Sampling, experiment drivers and
//! file formats live in the `drsmpc` companion crate.
//!
//! Module map:
//!
//! - [`linalg`]: dense matrices, discrete Lyapunov/Riccati solvers, PSD
//!   factors and the standard normal quantile.
//! - [`model`]: the LTI plant, the tube gain and the Gaussian ground-truth
//!   reachable set.
//! - [`drprs`]: empirical and Wasserstein worst-case VaR/CVaR, and reachable
//!   set synthesis from error samples.
//! - [`constraints`]: halfspace polytopes and tightening by a reachable set.
//! - [`qp`]: a dense dual active-set QP solver with KKT and Farkas
//!   certificates.
//! - [`smpc`]: condensed MPC construction, the receding-horizon controller and
//!   feasible-region scans.
#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod constraints;
pub mod drprs;
mod error;
pub mod linalg;
pub mod model;
pub mod qp;
pub mod smpc;

pub use error::{Error, Result};
