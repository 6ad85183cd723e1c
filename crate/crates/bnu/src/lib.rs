//! Bayesian nonparametric unmixing of hyperspectral images.
//!
//! Jointly infers endmember spectra, per-pixel fractional abundances, and
//! the number of endmembers from an observed image. The endmember count is
//! handled by an Indian Buffet Process prior over a binary band-activation
//! matrix; inference runs a Gibbs sampler with Metropolis birth and merge
//! moves, accelerated by parallel tempering with cooling. A synthetic scene
//! generator and the accompanying evaluation metrics support end-to-end
//! experiments from the command line.

// Parameter guards use the `!(x > 0)` form so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dist;
pub mod error;
pub mod ibp;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod simkit;
pub mod simplex;

mod linalg;

pub use error::{Error, Result};
pub use rng::RngStream;
