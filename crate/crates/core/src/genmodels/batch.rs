use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::lfm::{SimSettings, SimStats};
use super::model::{Dataset, Model};
use super::prior::PriorSpec;
use crate::error::{Error, Result};

/// Paired parameter draws and datasets sharing one dataset size.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBatch {
    /// One parameter vector per dataset (lengths differ across models).
    pub thetas: Vec<Vec<f64>>,
    pub datasets: Vec<Dataset>,
    /// Generating model per row; only set when several models are mixed.
    pub model_index: Option<Vec<usize>>,
    pub n: usize,
    pub stats: SimStats,
}

impl SimBatch {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// SplitMix64 finaliser: derives independent stream seeds from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, index))
}

/// Simulates `b` datasets that share one size drawn uniformly from
/// `n_range`. With more than one model, each row first draws its model
/// uniformly.
///
/// All randomness that decides the batch layout comes from `rng`; each
/// dataset then runs on its own seeded stream, so the result does not depend
/// on how many worker threads rayon uses.
pub fn make_batch<R: Rng + ?Sized>(
    models: &[Model],
    priors: &[PriorSpec],
    b: usize,
    n_range: (usize, usize),
    settings: &SimSettings,
    rng: &mut R,
) -> Result<SimBatch> {
    if b == 0 {
        return Err(Error::Contract("batch size must be at least 1".into()));
    }
    if models.is_empty() || models.len() != priors.len() {
        return Err(Error::Config(format!(
            "need one prior per model, got {} models and {} priors",
            models.len(),
            priors.len()
        )));
    }
    let (lo, hi) = n_range;
    for (m, p) in models.iter().zip(priors) {
        m.check_prior(p)?;
        let (min_n, max_n) = m.n_bounds();
        if lo > hi || lo < min_n || hi > max_n {
            return Err(Error::Config(format!(
                "n_range [{lo}, {hi}] must be ordered and lie within [{min_n}, {max_n}] for `{}`",
                m.name()
            )));
        }
    }
    settings.validate()?;

    let n = rng.random_range(lo..=hi);
    let comparison = models.len() > 1;
    let plan: Vec<(usize, u64)> = (0..b)
        .map(|_| {
            let k = if comparison {
                rng.random_range(0..models.len())
            } else {
                0
            };
            (k, rng.random::<u64>())
        })
        .collect();

    let rows: Vec<Result<(Vec<f64>, Dataset, SimStats)>> = plan
        .par_iter()
        .map(|&(k, seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let theta = priors[k].sample(&mut r);
            let mut stats = SimStats::default();
            let data = models[k].simulate(&theta, n, settings, &mut r, &mut stats)?;
            Ok((theta, data, stats))
        })
        .collect();

    let mut thetas = Vec::with_capacity(b);
    let mut datasets = Vec::with_capacity(b);
    let mut stats = SimStats::default();
    for row in rows {
        let (theta, data, s) = row?;
        thetas.push(theta);
        datasets.push(data);
        stats.merge(s);
    }
    Ok(SimBatch {
        thetas,
        datasets,
        model_index: comparison.then(|| plan.iter().map(|&(k, _)| k).collect()),
        n,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lfm() -> (Vec<Model>, Vec<PriorSpec>) {
        (vec![Model::Lfm], vec![Model::Lfm.default_prior()])
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let (m, p) = lfm();
        let s = SimSettings::default();
        let a = make_batch(&m, &p, 2, (50, 80), &s, &mut stream(5, 0)).unwrap();
        let b = make_batch(&m, &p, 2, (50, 80), &s, &mut stream(5, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.model_index.is_none());
    }

    #[test]
    fn degenerate_range_fixes_n() {
        let (m, p) = lfm();
        let batch = make_batch(&m, &p, 3, (800, 800), &SimSettings::default(), &mut stream(1, 1)).unwrap();
        assert!(batch.datasets.iter().all(|d| d.n() == 800));
        assert_eq!(batch.n, 800);
    }

    #[test]
    fn range_outside_bounds_rejected() {
        let (m, p) = lfm();
        let s = SimSettings::default();
        assert!(make_batch(&m, &p, 1, (10, 100), &s, &mut stream(0, 0)).is_err());
        assert!(make_batch(&m, &p, 1, (500, 400), &s, &mut stream(0, 0)).is_err());
        assert!(make_batch(&m, &p, 0, (50, 60), &s, &mut stream(0, 0)).is_err());
    }

    #[test]
    fn comparison_mode_draws_models_uniformly() {
        let g = Model::GaussianMean { dim: 2 };
        let models = [g, g];
        let priors = [g.default_prior(), g.default_prior()];
        let mut rng = stream(42, 0);
        let mut ones = 0usize;
        let reps = 10_000;
        for _ in 0..reps {
            let b = make_batch(&models, &priors, 1, (1, 1), &SimSettings::default(), &mut rng).unwrap();
            ones += b.model_index.unwrap()[0];
        }
        let frac = ones as f64 / reps as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
