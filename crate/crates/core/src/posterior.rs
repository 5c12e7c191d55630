//! Summary network and coupling flow trained together as one amortized
//! posterior estimator.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId, Params, Tensor};
use crate::error::{Error, Result};
use crate::flownet::{CouplingFlow, FlowConfig, PosteriorDraws, Standardizer};
use crate::genmodels::{stream, Dataset, Model, PriorSpec, SimBatch};
use crate::summarynet::{stack_datasets, SummaryConfig, SummaryNet, SummaryOutput};

pub const SUMMARY_PREFIX: &str = "summary";
pub const FLOW_PREFIX: &str = "flow";

/// Everything needed to rebuild a posterior estimator besides its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSpec {
    pub model: Model,
    pub prior: PriorSpec,
    pub summary: SummaryConfig,
    pub flow: FlowConfig,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimator {
    spec: PosteriorSpec,
    summary: SummaryNet,
    flow: CouplingFlow,
    pub params: Params,
}

/// Prior draws used to fit the parameter standardizer.
pub const STANDARDIZER_DRAWS: usize = 10_000;

impl PosteriorEstimator {
    /// Fresh network with random weights. `flow.dim` and
    /// `flow.condition_dim` are overwritten from the model and summary
    /// config.
    pub fn new(
        model: Model,
        prior: PriorSpec,
        summary: SummaryConfig,
        mut flow: FlowConfig,
        seed: u64,
    ) -> Result<Self> {
        model.validate()?;
        model.check_prior(&prior)?;
        flow.dim = model.dim();
        flow.condition_dim = summary.summary_dim;
        let standardizer = Standardizer::from_prior(&prior, STANDARDIZER_DRAWS, &mut stream(seed, u64::MAX))?;
        let spec = PosteriorSpec {
            model,
            prior,
            summary,
            flow,
            standardizer,
        };
        let mut est = Self::with_params(spec, Params::new())?;
        let mut rng = stream(seed, u64::MAX - 1);
        est.summary.init(&mut est.params, &mut rng);
        est.flow.init(&mut est.params, 0.1, &mut rng);
        Ok(est)
    }

    fn with_params(spec: PosteriorSpec, params: Params) -> Result<Self> {
        if spec.summary.input_dim != spec.model.input_dim() {
            return Err(Error::Config(format!(
                "summary.input_dim is {} but `{}` data has {} features",
                spec.summary.input_dim,
                spec.model.name(),
                spec.model.input_dim()
            )));
        }
        spec.summary.validate(spec.model.dim())?;
        if spec.flow.dim != spec.model.dim() || spec.flow.condition_dim != spec.summary.summary_dim {
            return Err(Error::Config(format!(
                "flow dims ({}, condition {}) do not match model ({}) and summary ({})",
                spec.flow.dim,
                spec.flow.condition_dim,
                spec.model.dim(),
                spec.summary.summary_dim
            )));
        }
        if spec.standardizer.dim() != spec.model.dim() {
            return Err(Error::Config("standardizer dimension does not match the model".into()));
        }
        let summary = SummaryNet::new(SUMMARY_PREFIX, spec.summary.clone());
        let flow = CouplingFlow::new(FLOW_PREFIX, spec.flow.clone())?;
        Ok(Self {
            spec,
            summary,
            flow,
            params,
        })
    }

    /// Rebuilds an estimator from stored weights, checking that every
    /// expected tensor is present with the right shape.
    pub fn from_parts(spec: PosteriorSpec, params: Params) -> Result<Self> {
        let est = Self::with_params(spec, Params::new())?;
        let mut expected = Params::new();
        est.summary.init(&mut expected, &mut stream(0, 0));
        est.flow.init(&mut expected, 0.0, &mut stream(0, 0));
        check_layout(&expected, &params)?;
        Ok(Self { params, ..est })
    }

    pub fn spec(&self) -> &PosteriorSpec {
        &self.spec
    }

    pub fn model(&self) -> Model {
        self.spec.model
    }

    pub fn flow(&self) -> &CouplingFlow {
        &self.flow
    }

    pub fn summary_net(&self) -> &SummaryNet {
        &self.summary
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.spec.standardizer
    }

    /// Mean negative log posterior over the batch, as a graph node.
    pub fn loss_graph(&self, graph: &mut Graph, batch: &SimBatch) -> Result<NodeId> {
        let d = self.spec.model.dim();
        let mut x = Vec::with_capacity(batch.len() * d);
        for theta in &batch.thetas {
            if theta.len() != d {
                return Err(Error::Contract(format!(
                    "batch parameter vector has {} entries, model expects {d}",
                    theta.len()
                )));
            }
            x.extend(self.spec.standardizer.standardize(theta));
        }
        let x = graph.constant(Tensor::matrix(batch.len(), d, x)?);
        let (rows, n) = stack_datasets(&batch.datasets)?;
        let rows = graph.constant(rows);
        let s = self.summary.forward(graph, &self.params, rows, n)?;
        let nll = self
            .flow
            .neg_log_density_graph(graph, &self.params, &self.spec.standardizer, x, s)?;
        Ok(graph.mean(nll))
    }

    pub fn summarize(&self, dataset: &Dataset) -> Result<SummaryOutput> {
        self.summary.summarize(&self.params, dataset)
    }

    pub fn log_posterior(&self, theta: &[f64], dataset: &Dataset) -> Result<f64> {
        let s = self.summarize(dataset)?;
        self.flow
            .log_posterior(&self.params, &self.spec.standardizer, theta, &s.s)
    }

    pub fn sample<R: Rng + ?Sized>(&self, dataset: &Dataset, n_draws: usize, rng: &mut R) -> Result<PosteriorDraws> {
        let s = self.summarize(dataset)?;
        self.sample_given_summary(&s.s, n_draws, rng)
    }

    pub fn sample_given_summary<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        n_draws: usize,
        rng: &mut R,
    ) -> Result<PosteriorDraws> {
        self.flow.sample(&self.params, &self.spec.standardizer, s, n_draws, rng)
    }

    /// Independent draws for many datasets; dataset `i` uses the stream
    /// `(seed, i)`, so results do not depend on scheduling.
    pub fn sample_many(&self, datasets: &[Dataset], n_draws: usize, seed: u64) -> Result<Vec<PosteriorDraws>> {
        datasets
            .par_iter()
            .enumerate()
            .map(|(i, d)| self.sample(d, n_draws, &mut stream(seed, i as u64)))
            .collect()
    }
}

pub(crate) fn check_layout(expected: &Params, actual: &Params) -> Result<()> {
    for (name, t) in expected.iter() {
        match actual.get(name) {
            None => return Err(Error::Config(format!("missing weight tensor `{name}`"))),
            Some(a) if a.shape() != t.shape() => {
                return Err(Error::Config(format!(
                    "weight `{name}` has shape {:?}, architecture needs {:?}",
                    a.shape(),
                    t.shape()
                )))
            }
            _ => {}
        }
    }
    if let Some((extra, _)) = actual.iter().find(|(n, _)| expected.get(n).is_none()) {
        return Err(Error::Config(format!("unexpected weight tensor `{extra}`")));
    }
    Ok(())
}

/// Batch flow loss value for `batch`.
pub fn flow_loss(est: &PosteriorEstimator, batch: &SimBatch) -> Result<f64> {
    let mut g = Graph::new();
    let loss = est.loss_graph(&mut g, batch)?;
    Ok(g.value(loss).data()[0])
}
