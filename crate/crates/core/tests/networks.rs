use amortize::diffcore::{Params, Tensor};
use amortize::evidentialnet::{dirichlet_log_density, evidential_loss, EvidentialConfig, ModelComparator};
use amortize::flownet::{CouplingFlow, FlowConfig, Standardizer};
use amortize::genmodels::{make_batch, stream, Dataset, Model, SimBatch, SimSettings, SimStats, Trial, TrialTable};
use amortize::posterior::{flow_loss, PosteriorEstimator, PosteriorSpec};
use amortize::summarynet::{summarize, SummaryConfig, SummaryNet};
use proptest::prelude::*;
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand_distr::{Gamma, StandardNormal};

const LOG_2PI: f64 = 1.8378770664093453;

fn small_summary(input_dim: usize) -> SummaryConfig {
    SummaryConfig {
        encoder_widths: vec![16, 16],
        decoder_widths: vec![16],
        summary_dim: 8,
        ..SummaryConfig::new(input_dim)
    }
}

fn table(trials: &[(f64, u8, u8)]) -> TrialTable {
    TrialTable::new(
        trials
            .iter()
            .map(|&(rt, choice, condition)| Trial { rt, choice, condition })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn summary_ignores_trial_order(
        trials in prop::collection::vec((0.2f64..3.0, 0u8..2, 1u8..5), 1..40),
        seed in any::<u64>(),
    ) {
        let net = SummaryNet::new("s", small_summary(6));
        let mut params = Params::new();
        net.init(&mut params, &mut stream(31, 0));
        let mut shuffled = trials.clone();
        shuffled.shuffle(&mut stream(seed, 0));
        let a = summarize(&net, &params, &table(&trials)).unwrap();
        let b = summarize(&net, &params, &table(&shuffled)).unwrap();
        for (x, y) in a.s.iter().zip(&b.s) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

fn shuffle_trials(batch: &SimBatch, seed: u64) -> SimBatch {
    let mut out = batch.clone();
    for (i, d) in out.datasets.iter_mut().enumerate() {
        if let Dataset::Trials(t) = d {
            let mut trials = t.trials().to_vec();
            trials.shuffle(&mut stream(seed, i as u64));
            *t = TrialTable::new(trials).unwrap();
        }
    }
    out
}

#[test]
fn flow_loss_ignores_trial_order() {
    let est = PosteriorEstimator::new(
        Model::Lfm,
        Model::Lfm.default_prior(),
        small_summary(6),
        FlowConfig::new(8, 8),
        32,
    )
    .unwrap();
    let m = Model::Lfm;
    let batch = make_batch(
        &[m],
        &[m.default_prior()],
        4,
        (50, 80),
        &SimSettings::default(),
        &mut stream(32, 0),
    )
    .unwrap();
    let a = flow_loss(&est, &batch).unwrap();
    let b = flow_loss(&est, &shuffle_trials(&batch, 3)).unwrap();
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
}

/// LFM estimator with an identity flow and unit standardizer.
fn identity_estimator() -> PosteriorEstimator {
    let est = PosteriorEstimator::new(
        Model::Lfm,
        Model::Lfm.default_prior(),
        small_summary(6),
        FlowConfig::new(8, 8),
        33,
    )
    .unwrap();
    let mut params = est.params.clone();
    for (name, t) in params.iter_mut() {
        if name.starts_with("flow.") {
            t.data_mut().fill(0.0);
        }
    }
    let spec = PosteriorSpec {
        standardizer: Standardizer::identity(8),
        ..est.spec().clone()
    };
    PosteriorEstimator::from_parts(spec, params).unwrap()
}

#[test]
fn flow_loss_at_the_origin_and_one_unit_away() {
    let est = identity_estimator();
    let m = Model::Lfm;
    let mut batch = make_batch(
        &[m],
        &[m.default_prior()],
        2,
        (50, 50),
        &SimSettings::default(),
        &mut stream(34, 0),
    )
    .unwrap();
    batch.thetas = vec![vec![0.0; 8]; 2];
    let at_origin = flow_loss(&est, &batch).unwrap();
    assert!((at_origin - 4.0 * LOG_2PI).abs() < 1e-12);
    assert!((at_origin - 7.3516).abs() < 1e-4);
    for theta in batch.thetas.iter_mut() {
        theta[0] = 1.0;
    }
    let shifted = flow_loss(&est, &batch).unwrap();
    assert!((shifted - at_origin - 0.5).abs() < 1e-12);
}

#[test]
fn zero_weights_give_identity_sampling() {
    let est = identity_estimator();
    let mut stats = SimStats::default();
    let theta = Model::Lfm.default_prior().means();
    let data = Model::Lfm
        .simulate(&theta, 60, &SimSettings::default(), &mut stream(35, 0), &mut stats)
        .unwrap();
    let draws = est.sample(&data, 4000, &mut stream(35, 1)).unwrap();
    for d in 0..8 {
        let col = draws.column(d);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 0.06 && (var - 1.0).abs() < 0.08, "dim {d}: {mean} {var}");
    }
}

fn toy_flow(gain: f64, blocks: usize, seed: u64) -> (CouplingFlow, Params) {
    let cfg = FlowConfig {
        n_blocks: blocks,
        subnet_widths: vec![8],
        ..FlowConfig::new(2, 3)
    };
    let flow = CouplingFlow::new("f", cfg).unwrap();
    let mut params = Params::new();
    flow.init(&mut params, gain, &mut stream(seed, 0));
    (flow, params)
}

#[test]
fn log_det_matches_numeric_jacobian() {
    let (flow, params) = toy_flow(0.3, 1, 36);
    let cond = [0.3, -0.7, 1.1];
    let h = 1e-6;
    for x in [[0.2, -0.4], [1.5, 0.9], [-1.0, 2.0]] {
        let (_, ld) = flow.forward(&params, &x, &cond).unwrap();
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut up = x;
            let mut down = x;
            up[j] += h;
            down[j] -= h;
            let (zu, _) = flow.forward(&params, &up, &cond).unwrap();
            let (zd, _) = flow.forward(&params, &down, &cond).unwrap();
            for i in 0..2 {
                jac[i][j] = (zu[i] - zd[i]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        assert!((det.abs().ln() - ld).abs() < 1e-4, "{} vs {ld}", det.abs().ln());
    }
}

#[test]
fn log_det_respects_the_clamp_bound() {
    let (flow, params) = toy_flow(25.0, 4, 37);
    let bound = flow.config().log_det_bound();
    let mut rng = stream(37, 1);
    let u = Uniform::new(-5.0, 5.0).unwrap();
    for _ in 0..500 {
        let x = [u.sample(&mut rng), u.sample(&mut rng)];
        let c = [u.sample(&mut rng), u.sample(&mut rng), u.sample(&mut rng)];
        let (_, ld) = flow.forward(&params, &x, &c).unwrap();
        assert!(ld.abs() <= bound, "{ld} exceeds {bound}");
    }
}

#[test]
fn density_integrates_to_one() {
    let (flow, params) = toy_flow(0.5, 4, 38);
    let std = Standardizer::identity(2);
    let cond = [0.5, 0.1, -0.4];
    let mut rng = stream(38, 1);
    let n = 100_000;
    let mut total = 0.0;
    for _ in 0..n {
        let theta: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
        let log_prior = -0.5 * (theta[0] * theta[0] + theta[1] * theta[1]) - LOG_2PI;
        total += (flow.log_posterior(&params, &std, &theta, &cond).unwrap() - log_prior).exp();
    }
    let z = total / n as f64;
    assert!((0.9..=1.1).contains(&z), "normalizer estimate {z}");
}

/// Asymptotic Kolmogorov p-value for a one-sample statistic `d` at size `n`.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn samples_follow_the_density() {
    let (flow, params) = toy_flow(0.5, 4, 39);
    let std = Standardizer::identity(2);
    let cond = [-0.3, 0.8, 0.2];
    // Marginal CDFs from the density on a fine grid.
    let (lo, hi, cells) = (-8.0, 8.0, 320);
    let width = (hi - lo) / cells as f64;
    let mut mass = vec![vec![0.0; cells]; 2];
    for i in 0..cells {
        for j in 0..cells {
            let theta = [lo + (i as f64 + 0.5) * width, lo + (j as f64 + 0.5) * width];
            let p = flow.log_posterior(&params, &std, &theta, &cond).unwrap().exp() * width * width;
            mass[0][i] += p;
            mass[1][j] += p;
        }
    }
    let draws = flow.sample(&params, &std, &cond, 4000, &mut stream(39, 1)).unwrap();
    for d in 0..2 {
        let total: f64 = mass[d].iter().sum();
        let cdf_at = |x: f64| {
            let pos = ((x - lo) / width).clamp(0.0, cells as f64);
            let full = pos.floor() as usize;
            let below: f64 = mass[d][..full].iter().sum();
            let partial = if full < cells {
                (pos - full as f64) * mass[d][full]
            } else {
                0.0
            };
            (below + partial) / total
        };
        let mut xs = draws.column(d);
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let stat = xs
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let f = cdf_at(x);
                (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        let p = ks_p_value(stat, xs.len());
        assert!(p > 0.01, "marginal {d}: KS {stat}, p {p}");
    }
}

fn comparator_with_head_bias(bias: [f64; 2]) -> ModelComparator {
    let models = vec![Model::Ddm, Model::Lfm];
    let priors = models.iter().map(|m| m.default_prior()).collect();
    let mut cfg = EvidentialConfig::new(2, 6);
    cfg.summary = small_summary(6);
    let mut cmp = ModelComparator::new(models, priors, cfg, 40).unwrap();
    for (name, t) in cmp.params.iter_mut() {
        if name.starts_with("evidential.head.out") {
            t.data_mut().fill(0.0);
        }
    }
    *cmp.params.get_mut("evidential.head.out.b").unwrap() = Tensor::row(&bias);
    cmp
}

fn mixed_batch(seed: u64) -> SimBatch {
    let models = [Model::Ddm, Model::Lfm];
    let priors = [Model::Ddm.default_prior(), Model::Lfm.default_prior()];
    make_batch(
        &models,
        &priors,
        6,
        (50, 60),
        &SimSettings::default(),
        &mut stream(seed, 0),
    )
    .unwrap()
}

/// Inverse of softplus.
fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

#[test]
fn evidential_loss_for_equal_concentrations_is_ln_2() {
    let cmp = comparator_with_head_bias([0.0, 0.0]);
    let loss = evidential_loss(&cmp, &mixed_batch(41)).unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn evidential_loss_for_three_to_one_odds() {
    // alpha = (6, 2) gives m = (0.75, 0.25).
    let cmp = comparator_with_head_bias([softplus_inv(5.0), softplus_inv(1.0)]);
    let mut batch = mixed_batch(42);
    let rows = batch.len();
    batch.model_index = Some(vec![0; rows]);
    let loss = evidential_loss(&cmp, &batch).unwrap();
    assert!((loss + 0.75f64.ln()).abs() < 1e-12);
    assert!((loss - 0.2877).abs() < 1e-4);
}

#[test]
fn dirichlet_density_integrates_to_one() {
    let alpha = [2.5, 1.5];
    // Uniform draws on the 1-simplex, density 1 with respect to pi_1.
    let mut rng = stream(43, 0);
    let u = Uniform::new(0.0, 1.0).unwrap();
    let n = 100_000;
    let total: f64 = (0..n)
        .map(|_| {
            let p: f64 = u.sample(&mut rng);
            dirichlet_log_density(&[p, 1.0 - p], &alpha).unwrap().exp()
        })
        .sum();
    let z = total / n as f64;
    assert!((0.9..=1.1).contains(&z), "{z}");
}

#[test]
fn dirichlet_density_matches_gamma_construction() {
    // Mean of Dirichlet draws built from Gamma variates agrees with alpha / sum.
    let alpha = [3.0, 1.0, 2.0];
    let mut rng = stream(44, 0);
    let mut mean = [0.0; 3];
    let n = 50_000;
    for _ in 0..n {
        let g: Vec<f64> = alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).unwrap().sample(&mut rng))
            .collect();
        let s: f64 = g.iter().sum();
        for k in 0..3 {
            mean[k] += g[k] / s / n as f64;
        }
    }
    for k in 0..3 {
        assert!((mean[k] - alpha[k] / 6.0).abs() < 0.01);
    }
    assert!((dirichlet_log_density(&[0.5, 0.5], &[2.0, 2.0]).unwrap() - 1.5f64.ln()).abs() < 1e-12);
}

#[test]
fn points_dataset_summary_is_order_free() {
    let net = SummaryNet::new("s", small_summary(2));
    let mut params = Params::new();
    net.init(&mut params, &mut stream(45, 0));
    let values: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut pairs: Vec<[f64; 2]> = values.chunks(2).map(|c| [c[0], c[1]]).collect();
    let a = net.summarize(&params, &Dataset::Points { dim: 2, values }).unwrap();
    pairs.reverse();
    let b = net
        .summarize(
            &params,
            &Dataset::Points {
                dim: 2,
                values: pairs.concat(),
            },
        )
        .unwrap();
    for (x, y) in a.s.iter().zip(&b.s) {
        assert!((x - y).abs() < 1e-9);
    }
}
