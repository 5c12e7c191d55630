//! Validation harnesses: simulation-based calibration, parameter recovery,
//! posterior summaries and Bayes factors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::flownet::PosteriorDraws;
use crate::genmodels::{stream, Dataset, Model, PriorSpec, SimSettings, SimStats};
use crate::posterior::PosteriorEstimator;

/// Anything that can draw from an approximate posterior for a dataset.
pub trait PosteriorSampler: Sync {
    fn dim(&self) -> usize;
    fn sample_posterior(&self, dataset: &Dataset, n_draws: usize, rng: &mut ChaCha8Rng) -> Result<PosteriorDraws>;
}

impl PosteriorSampler for PosteriorEstimator {
    fn dim(&self) -> usize {
        self.model().dim()
    }

    fn sample_posterior(&self, dataset: &Dataset, n_draws: usize, rng: &mut ChaCha8Rng) -> Result<PosteriorDraws> {
        self.sample(dataset, n_draws, rng)
    }
}

/// Point estimate of the parameters for one simulated dataset. The true
/// parameters are passed so that reference estimators can be injected.
pub trait PointEstimator: Sync {
    fn estimate(&self, truth: &[f64], dataset: &Dataset, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// Posterior mean from `draws` samples.
pub struct PosteriorMean<'a, S: PosteriorSampler> {
    pub sampler: &'a S,
    pub draws: usize,
}

impl<S: PosteriorSampler> PointEstimator for PosteriorMean<'_, S> {
    fn estimate(&self, _truth: &[f64], dataset: &Dataset, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.sampler.sample_posterior(dataset, self.draws, rng)?.mean())
    }
}

/// Returns the ground truth.
pub struct Oracle;

impl PointEstimator for Oracle {
    fn estimate(&self, truth: &[f64], _: &Dataset, _: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(truth.to_vec())
    }
}

/// Ignores the data and returns a fixed vector.
pub struct Constant(pub Vec<f64>);

impl PointEstimator for Constant {
    fn estimate(&self, _: &[f64], _: &Dataset, _: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

/// Shared simulation setting for the harnesses.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub model: Model,
    pub prior: PriorSpec,
    pub settings: SimSettings,
}

impl SimulationSetup {
    pub fn new(model: Model, prior: PriorSpec, settings: SimSettings) -> Result<Self> {
        model.validate()?;
        model.check_prior(&prior)?;
        settings.validate()?;
        Ok(Self { model, prior, settings })
    }

    pub fn for_estimator(est: &PosteriorEstimator, settings: SimSettings) -> Result<Self> {
        Self::new(est.model(), est.spec().prior.clone(), settings)
    }

    /// `theta ~ prior`, `X ~ model(theta, n)` on stream `rng`.
    pub fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Dataset, SimStats)> {
        let theta = self.prior.sample(rng);
        let mut stats = SimStats::default();
        let data = self.model.simulate(&theta, n, &self.settings, rng, &mut stats)?;
        Ok((theta, data, stats))
    }
}

pub const SBC_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcParameter {
    pub name: String,
    pub counts: Vec<u64>,
    /// `None` when too few replications for the chi-square approximation.
    pub chi_square: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcResult {
    pub replications: usize,
    pub draws: usize,
    pub n: usize,
    pub parameters: Vec<SbcParameter>,
    /// Raw ranks, `replications × D` row-major.
    pub ranks: Vec<usize>,
}

impl SbcResult {
    pub fn passes(&self, significance: f64) -> Vec<Option<bool>> {
        self.parameters
            .iter()
            .map(|p| p.p_value.map(|pv| pv >= significance))
            .collect()
    }

    /// `parameter,bin,count` rows.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("parameter,bin,count\n");
        for p in &self.parameters {
            for (b, c) in p.counts.iter().enumerate() {
                out.push_str(&format!("{},{b},{c}\n", p.name));
            }
        }
        out
    }
}

/// Minimum expected count per bin before the chi-square test is applied.
pub const MIN_EXPECTED_PER_BIN: f64 = 5.0;

/// Chi-square uniformity test over equally likely bins.
pub fn chi_square_uniform(counts: &[u64]) -> Option<(f64, f64)> {
    let total: u64 = counts.iter().sum();
    let k = counts.len();
    if k < 2 {
        return None;
    }
    let expected = total as f64 / k as f64;
    if expected < MIN_EXPECTED_PER_BIN {
        return None;
    }
    let stat: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("positive dof");
    Some((stat, dist.sf(stat)))
}

/// Simulation-based calibration: for each replication draw `θ*` from the
/// prior, simulate `n` observations, take `draws` posterior samples and
/// record the rank of `θ*_d` among them.
pub fn run_sbc<S: PosteriorSampler>(
    sampler: &S,
    setup: &SimulationSetup,
    replications: usize,
    n: usize,
    draws: usize,
    seed: u64,
) -> Result<SbcResult> {
    let d = setup.model.dim();
    if sampler.dim() != d {
        return Err(Error::Config(format!(
            "sampler has {} parameters but model `{}` has {d}",
            sampler.dim(),
            setup.model.name()
        )));
    }
    if replications == 0 {
        return Err(Error::Contract("SBC needs at least one replication".into()));
    }
    if (draws + 1) % SBC_BINS != 0 {
        return Err(Error::Contract(format!(
            "draws + 1 ({}) must be divisible by the {SBC_BINS} bins",
            draws + 1
        )));
    }
    let per_bin = (draws + 1) / SBC_BINS;
    let ranks: Vec<Vec<usize>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r as u64);
            let (theta, data, _) = setup.draw(n, &mut rng)?;
            let post = sampler.sample_posterior(&data, draws, &mut rng)?;
            Ok((0..d)
                .map(|j| (0..draws).filter(|&s| post.draw(s)[j] < theta[j]).count())
                .collect())
        })
        .collect::<Result<_>>()?;

    let names = setup.model.param_names();
    let parameters = (0..d)
        .map(|j| {
            let mut counts = vec![0u64; SBC_BINS];
            for r in &ranks {
                counts[r[j] / per_bin] += 1;
            }
            let test = chi_square_uniform(&counts);
            SbcParameter {
                name: names[j].clone(),
                counts,
                chi_square: test.map(|t| t.0),
                p_value: test.map(|t| t.1),
            }
        })
        .collect();
    Ok(SbcResult {
        replications,
        draws,
        n,
        parameters,
        ranks: ranks.into_iter().flatten().collect(),
    })
}

/// `1 − SS_res / SS_tot`; NaN when the truth has no variance.
pub fn r_squared(truth: &[f64], estimate: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(estimate).map(|(t, e)| (t - e).powi(2)).sum();
    if ss_tot == 0.0 {
        f64::NAN
    } else {
        1.0 - ss_res / ss_tot
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCell {
    pub n: usize,
    pub parameter: String,
    pub r_squared: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub n_grid: Vec<usize>,
    pub parameters: Vec<String>,
    pub cells: Vec<RecoveryCell>,
}

impl RecoveryResult {
    pub fn r_squared(&self, n: usize, parameter: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.parameter == parameter)
            .map(|c| c.r_squared)
    }

    /// `n,parameter,r_squared,ci_low,ci_high` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,parameter,r_squared,ci_low,ci_high\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.n, c.parameter, c.r_squared, c.ci_low, c.ci_high
            ));
        }
        out
    }
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Parameter recovery: R² of point estimates against ground truth per
/// dataset size, with percentile-bootstrap 95% intervals.
pub fn run_recovery<E: PointEstimator>(
    estimator: &E,
    setup: &SimulationSetup,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
) -> Result<RecoveryResult> {
    if replications < 2 {
        return Err(Error::Contract(
            "recovery needs at least two replications per cell".into(),
        ));
    }
    let (lo, hi) = setup.model.n_bounds();
    if let Some(bad) = n_grid.iter().find(|&&n| n < lo || n > hi) {
        return Err(Error::Config(format!("recovery N = {bad} outside [{lo}, {hi}]")));
    }
    let d = setup.model.dim();
    let names = setup.model.param_names();
    let mut cells = Vec::with_capacity(n_grid.len() * d);
    for (gi, &n) in n_grid.iter().enumerate() {
        let cell_seed = crate::genmodels::derive_seed(seed, gi as u64);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(cell_seed, r as u64);
                let (theta, data, _) = setup.draw(n, &mut rng)?;
                let est = estimator.estimate(&theta, &data, &mut rng)?;
                if est.len() != d {
                    return Err(Error::Contract(format!(
                        "estimator returned {} values, expected {d}",
                        est.len()
                    )));
                }
                Ok((theta, est))
            })
            .collect::<Result<_>>()?;
        let mut boot_rng = stream(cell_seed, u64::MAX);
        let resamples: Vec<Vec<usize>> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| {
                (0..replications)
                    .map(|_| boot_rng.random_range(0..replications))
                    .collect()
            })
            .collect();
        for j in 0..d {
            let truth: Vec<f64> = pairs.iter().map(|p| p.0[j]).collect();
            let est: Vec<f64> = pairs.iter().map(|p| p.1[j]).collect();
            let mut boot: Vec<f64> = resamples
                .iter()
                .map(|idx| {
                    let t: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
                    let e: Vec<f64> = idx.iter().map(|&i| est[i]).collect();
                    r_squared(&t, &e)
                })
                .filter(|v| v.is_finite())
                .collect();
            boot.sort_by(f64::total_cmp);
            let (ci_low, ci_high) = if boot.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (percentile(&boot, 0.025), percentile(&boot, 0.975))
            };
            cells.push(RecoveryCell {
                n,
                parameter: names[j].clone(),
                r_squared: r_squared(&truth, &est),
                ci_low,
                ci_high,
            });
        }
    }
    Ok(RecoveryResult {
        n_grid: n_grid.to_vec(),
        parameters: names,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Equal-tailed 95% interval bounds.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Pearson correlations; `None` where a column has zero variance.
    pub correlation: Vec<Vec<Option<f64>>>,
}

pub fn summarize_posterior(draws: &PosteriorDraws) -> Result<PosteriorSummary> {
    let s = draws.n_draws();
    if s < 2 {
        return Err(Error::Contract(format!(
            "posterior summary needs at least 2 draws, got {s}"
        )));
    }
    let d = draws.dim;
    let cols: Vec<Vec<f64>> = (0..d).map(|j| draws.column(j)).collect();
    let mean: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / s as f64).collect();
    let centred: Vec<Vec<f64>> = cols
        .iter()
        .zip(&mean)
        .map(|(c, m)| c.iter().map(|x| x - m).collect())
        .collect();
    let ss: Vec<f64> = centred.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    let sd = ss.iter().map(|v| (v / (s - 1) as f64).sqrt()).collect();
    let (mut lower, mut upper) = (Vec::with_capacity(d), Vec::with_capacity(d));
    for c in &cols {
        let mut sorted = c.clone();
        sorted.sort_by(f64::total_cmp);
        lower.push(percentile(&sorted, 0.025));
        upper.push(percentile(&sorted, 0.975));
    }
    let mut correlation = vec![vec![None; d]; d];
    for i in 0..d {
        for j in i..d {
            if ss[i] == 0.0 || ss[j] == 0.0 {
                continue;
            }
            let r = if i == j {
                1.0
            } else {
                let cov: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
                (cov / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0)
            };
            correlation[i][j] = Some(r);
            correlation[j][i] = Some(r);
        }
    }
    Ok(PosteriorSummary {
        mean,
        sd,
        lower,
        upper,
        correlation,
    })
}

/// `BF_ij = (post_i / post_j) / (prior_i / prior_j)`.
pub fn bayes_factors(model_post: &[f64], model_prior: &[f64]) -> Result<Vec<Vec<f64>>> {
    let on_simplex = |v: &[f64]| v.iter().all(|x| *x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if model_post.len() != model_prior.len() || model_post.len() < 2 {
        return Err(Error::Contract(
            "posterior and prior need the same length, at least 2".into(),
        ));
    }
    if !on_simplex(model_post) || !on_simplex(model_prior) {
        return Err(Error::Contract("model probabilities must lie on the simplex".into()));
    }
    if model_prior.iter().any(|p| *p == 0.0) {
        return Err(Error::Contract("prior model probabilities must be non-zero".into()));
    }
    let j = model_post.len();
    Ok((0..j)
        .map(|a| {
            (0..j)
                .map(|b| {
                    if a == b {
                        1.0
                    } else {
                        (model_post[a] / model_post[b]) / (model_prior[a] / model_prior[b])
                    }
                })
                .collect()
        })
        .collect())
}
