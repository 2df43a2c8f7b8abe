//! Empirical Bayesian recovery of 1D signals from multiple noisy Fourier
//! measurement vectors.
//!
//! The pipeline estimates a prior strength by K-fold cross-validation,
//! locates the support of the signal in an edge (PA) domain from the
//! across-measurement variance, masks the sparsity prior there, and then
//! samples the resulting posterior with Metropolis-Hastings. Diagnostics
//! cover credibility intervals, autocorrelation and acceptance ratios.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod inference;
pub mod io;
pub mod mcmc;
pub mod pa;
pub mod pipeline;
pub mod signals;
pub mod vbjs;

pub use error::{Error, Result};
