//! Expected-improvement Bayesian optimization with length scales confined
//! to shrinking bounds, plus executable checks of the information-gain and
//! regret machinery behind it.
//!
//! The pieces, bottom up:
//!
//! - [`kernel`]: squared-exponential and Matérn-5/2 ARD kernels.
//! - [`gp`]: exact GP posterior and marginal likelihood.
//! - [`acquisition`]: `τ`, the EI variants, candidate-set maximization.
//! - [`infogain`]: information gain, the ν-scale statistic ξ, rate curves.
//! - [`hypercontrol`]: the over-confidence counter, upper-bound shrinkage,
//!   constrained maximum likelihood for θ, and ν selection.
//! - [`engine`]: the optimization loop and its diagnostics.
//! - [`benchlab`]: the trap objective, noise models, baseline, sweeps.
//! - [`io`]: config files and trace persistence.
//! - [`verify`]: the oracle suite behind `hyperbo verify`.

pub mod acquisition;
pub mod benchlab;
pub mod domain;
pub mod engine;
pub mod error;
pub mod gp;
pub mod hypercontrol;
pub mod infogain;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod verify;

pub use error::{Error, Result};
