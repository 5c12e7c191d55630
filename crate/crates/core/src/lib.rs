//! Amortized Bayesian parameter estimation and model comparison for
//! simulation-defined response-time models.
//!
//! A permutation-invariant summary network and a conditional coupling flow
//! are trained together on simulated `(θ, X)` pairs; after training, posterior
//! draws for a new dataset cost one summary pass and one flow inversion. An
//! evidential network trained on a mixture of models returns Dirichlet
//! concentrations over candidate models.

pub mod diagnostics;
pub mod diffcore;
pub mod error;
pub mod evidentialnet;
pub mod flownet;
pub mod genmodels;
pub mod posterior;
pub mod summarynet;
pub mod trainer;

pub use error::{Error, Result};
