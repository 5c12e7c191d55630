//! Online training loops: every iteration simulates a fresh batch, evaluates
//! the loss, backpropagates and takes one Adam step.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamState, Graph, NodeId, Params};
use crate::error::{Error, Result};
use crate::evidentialnet::ModelComparator;
use crate::genmodels::{derive_seed, make_batch, stream, Model, PriorSpec, SimBatch, SimSettings, SimStats};
use crate::posterior::PosteriorEstimator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    /// Multiplicative decay applied every `interval` iterations.
    pub decay: f64,
    pub interval: usize,
}

impl LrSchedule {
    pub fn at(&self, iteration: usize) -> f64 {
        self.initial * self.decay.powi((iteration / self.interval.max(1)) as i32)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 5e-4,
            decay: 0.95,
            interval: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub n_range: (usize, usize),
    #[serde(default)]
    pub lr: LrSchedule,
    pub seed: u64,
    /// Iterations between checkpoint callbacks; 0 disables them.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(iterations: usize, batch_size: usize, n_range: (usize, usize), seed: u64) -> Self {
        Self {
            iterations,
            batch_size,
            n_range,
            lr: LrSchedule::default(),
            seed,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("train.iterations must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.lr.initial > 0.0 && self.lr.decay > 0.0 && self.lr.decay <= 1.0) {
            return Err(Error::Config("train.lr needs initial > 0 and decay in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Optimizer position within a run; saved with checkpoints so a run can be
/// resumed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed iterations.
    pub iteration: usize,
    pub adam: AdamState,
    pub losses: Vec<f64>,
    pub stats: SimStats,
}

impl TrainState {
    pub fn fresh(lr: f64) -> Self {
        Self {
            iteration: 0,
            adam: AdamState::new(lr),
            losses: Vec::new(),
            stats: SimStats::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub timeouts: u64,
    pub trials: u64,
    pub wall_time_secs: f64,
    pub final_checkpoint_id: String,
}

impl TrainReport {
    /// `iteration,loss` lines with a header.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", i + 1));
        }
        out
    }
}

/// FNV-1a over the bit patterns of every weight, in name order.
pub fn weights_id(params: &Params) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (name, t) in params.iter() {
        eat(name.as_bytes());
        for x in t.data() {
            eat(&x.to_bits().to_le_bytes());
        }
    }
    format!("{h:016x}")
}

/// Something with trainable weights and a batch loss.
pub trait Trainable {
    fn params(&self) -> &Params;
    fn params_mut(&mut self) -> &mut Params;
    fn loss_graph(&self, graph: &mut Graph, batch: &SimBatch) -> Result<NodeId>;
    fn models(&self) -> Vec<Model>;
    fn priors(&self) -> Vec<PriorSpec>;
}

impl Trainable for PosteriorEstimator {
    fn params(&self) -> &Params {
        &self.params
    }
    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }
    fn loss_graph(&self, graph: &mut Graph, batch: &SimBatch) -> Result<NodeId> {
        PosteriorEstimator::loss_graph(self, graph, batch)
    }
    fn models(&self) -> Vec<Model> {
        vec![self.model()]
    }
    fn priors(&self) -> Vec<PriorSpec> {
        vec![self.spec().prior.clone()]
    }
}

impl Trainable for ModelComparator {
    fn params(&self) -> &Params {
        &self.params
    }
    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }
    fn loss_graph(&self, graph: &mut Graph, batch: &SimBatch) -> Result<NodeId> {
        ModelComparator::loss_graph(self, graph, batch)
    }
    fn models(&self) -> Vec<Model> {
        self.models.clone()
    }
    fn priors(&self) -> Vec<PriorSpec> {
        self.priors.clone()
    }
}

/// Training batch for iteration `iteration` of a run seeded with `seed`.
pub fn batch_for_iteration<T: Trainable>(
    net: &T,
    config: &TrainConfig,
    settings: &SimSettings,
    iteration: usize,
) -> Result<SimBatch> {
    make_batch(
        &net.models(),
        &net.priors(),
        config.batch_size,
        config.n_range,
        settings,
        &mut stream(config.seed, iteration as u64),
    )
}

/// Runs iterations `state.iteration..config.iterations`.
///
/// `on_checkpoint` fires every `config.checkpoint_every` iterations and after
/// the last one. Each batch depends only on `(config.seed, iteration)`, so a
/// run resumed from a saved state reproduces an uninterrupted one.
pub fn train<T: Trainable>(
    net: &mut T,
    config: &TrainConfig,
    settings: &SimSettings,
    resume: Option<TrainState>,
    on_checkpoint: &mut dyn FnMut(&T, &TrainState) -> Result<()>,
) -> Result<(TrainState, TrainReport)> {
    config.validate()?;
    settings.validate()?;
    let started = Instant::now();
    let mut state = resume.unwrap_or_else(|| TrainState::fresh(config.lr.initial));
    if state.iteration > config.iterations {
        return Err(Error::Config(format!(
            "resume state is at iteration {}, beyond the configured {}",
            state.iteration, config.iterations
        )));
    }

    while state.iteration < config.iterations {
        let it = state.iteration;
        let batch = batch_for_iteration(net, config, settings, it)?;
        state.stats.merge(batch.stats);
        state.stats.check(settings.max_timeout_fraction)?;

        let mut graph = Graph::new();
        let loss = net.loss_graph(&mut graph, &batch)?;
        let value = graph.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                batch_seed: derive_seed(config.seed, it as u64),
            });
        }
        let grads = graph.backward(loss)?;
        drop(graph);
        state.adam.lr = config.lr.at(it);
        state.adam.step(net.params_mut(), &grads)?;
        state.losses.push(value);
        state.iteration += 1;

        let done = state.iteration == config.iterations;
        if done || (config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0) {
            on_checkpoint(net, &state)?;
        }
    }

    let report = TrainReport {
        losses: state.losses.clone(),
        timeouts: state.stats.timeouts,
        trials: state.stats.trials,
        wall_time_secs: started.elapsed().as_secs_f64(),
        final_checkpoint_id: weights_id(net.params()),
    };
    Ok((state, report))
}

/// Trains a posterior estimator on its own model and prior.
pub fn train_posterior(
    est: &mut PosteriorEstimator,
    config: &TrainConfig,
    settings: &SimSettings,
    resume: Option<TrainState>,
    on_checkpoint: &mut dyn FnMut(&PosteriorEstimator, &TrainState) -> Result<()>,
) -> Result<(TrainState, TrainReport)> {
    train(est, config, settings, resume, on_checkpoint)
}

/// Trains an evidential comparator on a uniform mixture of its models.
pub fn train_comparison(
    cmp: &mut ModelComparator,
    config: &TrainConfig,
    settings: &SimSettings,
    resume: Option<TrainState>,
    on_checkpoint: &mut dyn FnMut(&ModelComparator, &TrainState) -> Result<()>,
) -> Result<(TrainState, TrainReport)> {
    train(cmp, config, settings, resume, on_checkpoint)
}

/// No-op checkpoint hook.
pub fn no_checkpoints<T>(_: &T, _: &TrainState) -> Result<()> {
    Ok(())
}
