//! Diagnostics for l1- and nuclear-norm penalized least squares: the noise
//! barrier, the large-signal bias, the critical tuning level `L0(p/k)`,
//! compatibility and sparse-eigenvalue constants, and the packing
//! constructions behind the matching lower bounds.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod lower_bounds;
pub mod model;
pub mod rng;
pub mod solvers;
pub mod trace;
pub mod tuning;

pub use error::{Error, Result};
