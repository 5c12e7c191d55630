//! Stochastic simulators, priors and training-batch generation.

mod batch;
mod gaussian;
mod lfm;
mod model;
mod prior;
mod stable;

pub use batch::{derive_seed, make_batch, stream, SimBatch};
pub use gaussian::{gaussian_oracle_posterior, gaussian_oracle_simulate};
pub use lfm::{
    simulate_dataset, simulate_lfm_trial, simulate_trials, LfmParams, SimSettings, SimStats, Trial, TrialTable,
    N_CONDITIONS,
};
pub use model::{Dataset, Model};
pub use prior::{sample_prior, PriorComponent, PriorDist, PriorSpec};
pub use stable::{sample_alpha_stable, SymmetricStable};
