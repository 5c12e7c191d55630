use amortize::diagnostics::{
    bayes_factors, run_recovery, run_sbc, summarize_posterior, Constant, Oracle, PosteriorSampler, SimulationSetup,
};
use amortize::flownet::PosteriorDraws;
use amortize::genmodels::{gaussian_oracle_posterior, stream, Dataset, Model, SimSettings};
use amortize::Result;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Binomial, DiscreteCDF};

/// Exact conjugate posterior, optionally widened by `inflate`.
struct Conjugate {
    dim: usize,
    inflate: f64,
}

impl PosteriorSampler for Conjugate {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_posterior(&self, dataset: &Dataset, n_draws: usize, rng: &mut ChaCha8Rng) -> Result<PosteriorDraws> {
        let moments: Vec<(f64, f64)> = (0..self.dim)
            .map(|d| gaussian_oracle_posterior(&dataset.column(d).unwrap()))
            .collect();
        let mut data = Vec::with_capacity(n_draws * self.dim);
        for _ in 0..n_draws {
            for &(m, sd) in &moments {
                let e: f64 = StandardNormal.sample(rng);
                data.push(m + self.inflate * sd * e);
            }
        }
        Ok(PosteriorDraws::new(self.dim, data))
    }
}

fn gaussian_setup(dim: usize) -> SimulationSetup {
    let m = Model::GaussianMean { dim };
    SimulationSetup::new(m, m.default_prior(), SimSettings::default()).unwrap()
}

#[test]
fn exact_posterior_passes_sbc() {
    let dim = 6;
    let result = run_sbc(&Conjugate { dim, inflate: 1.0 }, &gaussian_setup(dim), 1000, 20, 99, 51).unwrap();
    let rejections = result.passes(0.01).iter().filter(|p| **p == Some(false)).count();
    // 99% upper bound of Binomial(dim, 0.01).
    let bound = (0..=dim as u64)
        .find(|&k| Binomial::new(0.01, dim as u64).unwrap().cdf(k) >= 0.99)
        .unwrap();
    assert!(rejections as u64 <= bound, "{rejections} rejections, bound {bound}");
    for p in &result.parameters {
        assert_eq!(p.counts.iter().sum::<u64>(), 1000);
    }
}

#[test]
fn overdispersed_posterior_fails_sbc_with_a_central_bulge() {
    let dim = 2;
    let result = run_sbc(&Conjugate { dim, inflate: 2.0 }, &gaussian_setup(dim), 1000, 20, 99, 52).unwrap();
    for p in &result.parameters {
        assert!(p.p_value.unwrap() < 0.01);
        let edges = p.counts[0] + p.counts[19];
        let middle = p.counts[9] + p.counts[10];
        assert!(middle > edges, "{:?}", p.counts);
    }
}

#[test]
fn single_replication_performs_no_test() {
    let result = run_sbc(&Conjugate { dim: 2, inflate: 1.0 }, &gaussian_setup(2), 1, 20, 99, 53).unwrap();
    for p in &result.parameters {
        assert_eq!(p.counts.iter().sum::<u64>(), 1);
        assert!(p.p_value.is_none() && p.chi_square.is_none());
    }
}

#[test]
fn sbc_rejects_incompatible_draw_counts() {
    assert!(run_sbc(&Conjugate { dim: 2, inflate: 1.0 }, &gaussian_setup(2), 10, 20, 100, 54).is_err());
}

#[test]
fn recovery_of_truth_and_of_a_constant() {
    let setup = gaussian_setup(2);
    let perfect = run_recovery(&Oracle, &setup, &[10, 50], 40, 55).unwrap();
    for c in &perfect.cells {
        assert_eq!(c.r_squared, 1.0);
    }
    let flat = run_recovery(&Constant(vec![0.0, 0.0]), &setup, &[10, 50], 40, 56).unwrap();
    for c in &flat.cells {
        assert!(c.r_squared <= 0.0);
        assert!(c.ci_low <= c.ci_high);
    }
    assert!(flat.to_csv().starts_with("n,parameter,r_squared,ci_low,ci_high\n"));
}

#[test]
fn recovery_rejects_sizes_outside_the_model_bounds() {
    let m = Model::Lfm;
    let setup = SimulationSetup::new(m, m.default_prior(), SimSettings::default()).unwrap();
    assert!(run_recovery(&Oracle, &setup, &[10], 5, 57).is_err());
}

#[test]
fn independent_columns_have_small_correlation() {
    let mut rng = stream(58, 0);
    let data: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let s = summarize_posterior(&PosteriorDraws::new(2, data)).unwrap();
    assert!(s.correlation[0][1].unwrap().abs() < 0.05);
    assert!((s.mean[0]).abs() < 0.05 && (s.sd[1] - 1.0).abs() < 0.05);
    assert!(s.lower[0] < -1.8 && s.upper[0] > 1.8);
}

#[test]
fn duplicated_column_has_unit_correlation() {
    let mut rng = stream(59, 0);
    let mut data = Vec::new();
    for _ in 0..500 {
        let x: f64 = StandardNormal.sample(&mut rng);
        data.extend([x, x]);
    }
    let s = summarize_posterior(&PosteriorDraws::new(2, data)).unwrap();
    assert_eq!(s.correlation[0][1], Some(1.0));
}

#[test]
fn bayes_factors_are_reciprocal() {
    let bf = bayes_factors(&[0.8, 0.2], &[0.5, 0.5]).unwrap();
    assert!((bf[0][1] - 4.0).abs() < 1e-12);
    assert!((bf[0][1] * bf[1][0] - 1.0).abs() < 1e-12);
    let same = bayes_factors(&[0.3, 0.7], &[0.3, 0.7]).unwrap();
    assert!(same.iter().flatten().all(|b| (b - 1.0).abs() < 1e-12));
    assert!(bayes_factors(&[0.5, 0.5], &[1.0, 0.0]).is_err());
}
