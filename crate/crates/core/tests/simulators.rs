use amortize::genmodels::{
    gaussian_oracle_posterior, simulate_lfm_trial, simulate_trials, stream, LfmParams, SimSettings, SimStats,
    SymmetricStable,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn params(v: f64, alpha: f64, a: f64, zr: f64) -> LfmParams {
    LfmParams {
        v: [v; 4],
        alpha,
        a,
        zr,
        t0: 0.3,
    }
}

/// Upper-bound probability for drift `v`, diffusion coefficient sqrt(2).
fn wiener_upper(v: f64, a: f64, z: f64) -> f64 {
    if v == 0.0 {
        return z / a;
    }
    (1.0 - (-v * z).exp()) / (1.0 - (-v * a).exp())
}

/// A plain Euler diffusion written without the stable sampler.
fn gaussian_walk<R: Rng>(p: &LfmParams, dt: f64, rng: &mut R) -> (u8, f64) {
    let sd = (2.0 * dt).sqrt();
    let mut x = p.zr * p.a;
    let mut step = 0u64;
    loop {
        step += 1;
        let e: f64 = StandardNormal.sample(rng);
        x += p.v[0] * dt + sd * e;
        if x >= p.a {
            return (1, p.t0 + step as f64 * dt);
        }
        if x <= 0.0 {
            return (0, p.t0 + step as f64 * dt);
        }
    }
}

fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn choice_probability_matches_diffusion_formula() {
    let p = params(1.0, 2.0, 2.0, 0.5);
    let mut rng = stream(21, 0);
    let mut stats = SimStats::default();
    let n = 100_000;
    let upper: u32 = (0..n)
        .map(|_| {
            simulate_lfm_trial(&p, 1, &SimSettings::default(), &mut rng, &mut stats)
                .unwrap()
                .choice as u32
        })
        .sum();
    let sim = upper as f64 / n as f64;
    let exact = wiener_upper(1.0, 2.0, 1.0);
    assert!((sim - exact).abs() < 0.02, "{sim} vs {exact}");
}

#[test]
fn gaussian_case_matches_an_independent_diffusion_simulator() {
    let p = params(0.8, 2.0, 1.4, 0.45);
    let settings = SimSettings::default();
    let mut stats = SimStats::default();
    let mut rng = stream(22, 0);
    let mut ours: Vec<f64> = (0..20_000)
        .map(|_| simulate_lfm_trial(&p, 1, &settings, &mut rng, &mut stats).unwrap().rt)
        .collect();
    let mut rng = stream(22, 1);
    let mut theirs: Vec<f64> = (0..20_000)
        .map(|_| gaussian_walk(&p, settings.dt, &mut rng).1)
        .collect();
    // Two-sample KS critical value at the 0.001 level.
    let crit = 1.95 * (2.0f64 / 20_000.0).sqrt();
    let d = ks_statistic(&mut ours, &mut theirs);
    assert!(d < crit, "KS distance {d} >= {crit}");
}

#[test]
fn mean_rt_falls_as_drift_grows() {
    let settings = SimSettings::default();
    let mut last = f64::INFINITY;
    for (i, v) in [0.0, 1.0, 2.0, 4.0].into_iter().enumerate() {
        let p = params(v, 1.6, 1.5, 0.5);
        let mut stats = SimStats::default();
        let table = simulate_trials(&p, 4000, &settings, &mut stream(23, i as u64), &mut stats).unwrap();
        let mean = table.trials().iter().map(|t| t.rt).sum::<f64>() / table.n() as f64;
        assert!(mean < last, "|v| = {v}: mean rt {mean} not below {last}");
        last = mean;
    }
}

#[test]
fn stable_law_is_symmetric() {
    let mut rng = stream(25, 0);
    for alpha in [1.3, 1.7] {
        let s = SymmetricStable::new(alpha).unwrap();
        let xs: Vec<f64> = (0..200_000).map(|_| s.sample(&mut rng)).collect();
        let below = xs.iter().filter(|x| **x < 0.0).count() as f64 / xs.len() as f64;
        assert!((below - 0.5).abs() < 0.005, "alpha {alpha}: P(X<0) = {below}");
    }
}

#[test]
fn conjugate_oracle_values() {
    let (m, sd) = gaussian_oracle_posterior(&[0.0; 4]);
    assert_eq!(m, 0.0);
    assert!((sd - 1.0 / 5f64.sqrt()).abs() < 1e-15);
    let (m, sd) = gaussian_oracle_posterior(&[5.0]);
    assert!((m - 2.5).abs() < 1e-15);
    assert!((sd - 0.5f64.sqrt()).abs() < 1e-15);
}
