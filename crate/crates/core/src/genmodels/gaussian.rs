//! Conjugate normal–normal model with a closed-form posterior: prior
//! `mu ~ N(0, 1)`, observations `x_i ~ N(mu, 1)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_oracle_simulate<R: Rng + ?Sized>(mu: f64, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            mu + e
        })
        .collect()
}

/// Posterior `(mean, sd)` of `mu`: `N(n·x̄/(n+1), 1/(n+1))`. Empty data
/// returns the prior.
pub fn gaussian_oracle_posterior(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let sum: f64 = data.iter().sum();
    (sum / (n + 1.0), 1.0 / (n + 1.0).sqrt())
}
