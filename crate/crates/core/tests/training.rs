use amortize::evidentialnet::{EvidentialConfig, ModelComparator};
use amortize::flownet::FlowConfig;
use amortize::genmodels::{stream, Model, PriorComponent, PriorDist, PriorSpec, SimSettings, SimStats};
use amortize::posterior::PosteriorEstimator;
use amortize::summarynet::SummaryConfig;
use amortize::trainer::{no_checkpoints, train_comparison, train_posterior, weights_id, TrainConfig, TrainState};
use amortize::Error;

fn toy_estimator(seed: u64) -> PosteriorEstimator {
    let m = Model::GaussianMean { dim: 2 };
    let summary = SummaryConfig {
        encoder_widths: vec![32, 32],
        decoder_widths: vec![32],
        summary_dim: 8,
        ..SummaryConfig::new(2)
    };
    let flow = FlowConfig {
        n_blocks: 4,
        subnet_widths: vec![32, 32],
        ..FlowConfig::new(2, 8)
    };
    PosteriorEstimator::new(m, m.default_prior(), summary, flow, seed).unwrap()
}

#[test]
fn one_iteration_run() {
    let mut est = toy_estimator(61);
    let mut calls = 0;
    let mut hook = |_: &PosteriorEstimator, s: &TrainState| {
        calls += 1;
        assert_eq!(s.iteration, 1);
        Ok(())
    };
    let cfg = TrainConfig::new(1, 8, (10, 20), 61);
    let (_, report) = train_posterior(&mut est, &cfg, &SimSettings::default(), None, &mut hook).unwrap();
    assert_eq!(report.losses.len(), 1);
    assert_eq!(calls, 1);
    assert_eq!(report.final_checkpoint_id, weights_id(&est.params));
}

#[test]
fn same_seed_same_weights() {
    let cfg = TrainConfig::new(15, 8, (10, 30), 62);
    let run = || {
        let mut est = toy_estimator(62);
        train_posterior(&mut est, &cfg, &SimSettings::default(), None, &mut no_checkpoints).unwrap();
        est.params
    };
    let a = run();
    let b = run();
    for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
        assert_eq!(na, nb);
        let bits_a: Vec<u64> = ta.data().iter().map(|x| x.to_bits()).collect();
        let bits_b: Vec<u64> = tb.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "{na}");
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let settings = SimSettings::default();
    let full_cfg = TrainConfig::new(12, 8, (10, 30), 63);
    let mut full = toy_estimator(63);
    let (full_state, _) = train_posterior(&mut full, &full_cfg, &settings, None, &mut no_checkpoints).unwrap();

    let mut half = toy_estimator(63);
    let half_cfg = TrainConfig {
        iterations: 5,
        ..full_cfg.clone()
    };
    let (state, _) = train_posterior(&mut half, &half_cfg, &settings, None, &mut no_checkpoints).unwrap();
    let (resumed_state, _) =
        train_posterior(&mut half, &full_cfg, &settings, Some(state), &mut no_checkpoints).unwrap();

    assert_eq!(weights_id(&full.params), weights_id(&half.params));
    assert_eq!(full_state, resumed_state);
}

#[test]
fn resume_beyond_the_end_is_rejected() {
    let mut est = toy_estimator(64);
    let mut state = TrainState::fresh(5e-4);
    state.iteration = 10;
    let cfg = TrainConfig::new(5, 4, (10, 20), 64);
    assert!(train_posterior(
        &mut est,
        &cfg,
        &SimSettings::default(),
        Some(state),
        &mut no_checkpoints
    )
    .is_err());
}

#[test]
fn gaussian_toy_loss_decreases() {
    let mut est = toy_estimator(65);
    let mut cfg = TrainConfig::new(1500, 32, (10, 100), 65);
    cfg.lr.initial = 1e-3;
    let (_, report) = train_posterior(&mut est, &cfg, &SimSettings::default(), None, &mut no_checkpoints).unwrap();
    let head = report.losses[..300].iter().sum::<f64>() / 300.0;
    let tail = report.losses[1200..].iter().sum::<f64>() / 300.0;
    assert!(tail < head - 0.3, "leading {head}, trailing {tail}");
}

#[test]
#[ignore = "20k iterations; several minutes"]
fn gaussian_toy_loss_decreases_over_full_budget() {
    let mut est = toy_estimator(66);
    let cfg = TrainConfig::new(20_000, 32, (10, 100), 66);
    let (_, report) = train_posterior(&mut est, &cfg, &SimSettings::default(), None, &mut no_checkpoints).unwrap();
    let n = report.losses.len();
    let head = report.losses[..1000].iter().sum::<f64>() / 1000.0;
    let tail = report.losses[n - 1000..].iter().sum::<f64>() / 1000.0;
    assert!(tail < head);
}

#[test]
fn timeouts_abort_training() {
    // Zero drift, wide bounds and a tiny t_max: nearly every walk times out.
    let m = Model::Ddm;
    let mut prior = m.default_prior();
    for c in prior.components.iter_mut() {
        if c.name == "a" {
            c.dist = PriorDist::Uniform { lower: 2.9, upper: 3.0 };
        }
    }
    let summary = SummaryConfig {
        encoder_widths: vec![8],
        decoder_widths: vec![8],
        summary_dim: 8,
        ..SummaryConfig::new(6)
    };
    let mut est = PosteriorEstimator::new(m, prior, summary, FlowConfig::new(7, 8), 67).unwrap();
    let settings = SimSettings {
        dt: 0.001,
        t_max: 0.05,
        max_timeout_fraction: 0.01,
    };
    let cfg = TrainConfig::new(3, 2, (50, 50), 67);
    let err = train_posterior(&mut est, &cfg, &settings, None, &mut no_checkpoints).unwrap_err();
    assert!(matches!(err, Error::TimeoutBudget { .. }), "{err}");
}

fn lfm_with_alpha(lower: f64, upper: f64) -> PriorSpec {
    let mut p = Model::Lfm.default_prior();
    for c in p.components.iter_mut() {
        if c.name == "alpha" {
            *c = PriorComponent {
                dist: PriorDist::Uniform { lower, upper },
                ..c.clone()
            };
        }
    }
    p
}

/// With an LFM whose alpha is pinned near 2, DDM data are explained by both
/// models, and the simpler DDM should collect more posterior mass.
#[test]
#[ignore = "trains an evidential network; tens of minutes"]
fn occam_preference_for_the_nested_model() {
    let models = vec![Model::Ddm, Model::Lfm];
    let priors = vec![Model::Ddm.default_prior(), lfm_with_alpha(1.9, 2.0)];
    let mut cfg = EvidentialConfig::new(2, 6);
    cfg.summary.encoder_widths = vec![32, 32];
    cfg.summary.decoder_widths = vec![32];
    let mut cmp = ModelComparator::new(models, priors.clone(), cfg, 68).unwrap();
    let train_cfg = TrainConfig::new(1500, 32, (200, 400), 68);
    train_comparison(&mut cmp, &train_cfg, &SimSettings::default(), None, &mut no_checkpoints).unwrap();
    let mut m_ddm = 0.0;
    let reps = 200;
    for i in 0..reps {
        let mut rng = stream(69, i);
        let theta = priors[0].sample(&mut rng);
        let data = Model::Ddm
            .simulate(&theta, 300, &SimSettings::default(), &mut rng, &mut SimStats::default())
            .unwrap();
        m_ddm += cmp.evaluate(&data).unwrap().mean()[0] / reps as f64;
    }
    assert!(m_ddm > 0.5, "mean DDM probability {m_ddm}");
}
