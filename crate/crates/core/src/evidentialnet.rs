//! Evidential classifier: maps a dataset to Dirichlet concentrations over
//! candidate models.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::diffcore::{Graph, Mlp, NodeId, Params, Tensor};
use crate::error::{Error, Result};
use crate::genmodels::{stream, Dataset, Model, PriorSpec, SimBatch};
use crate::posterior::check_layout;
use crate::summarynet::{stack_datasets, SummaryConfig, SummaryNet};

pub const EVIDENTIAL_PREFIX: &str = "evidential";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidentialConfig {
    pub n_models: usize,
    pub summary: SummaryConfig,
    pub head_widths: Vec<usize>,
}

impl EvidentialConfig {
    pub fn new(n_models: usize, input_dim: usize) -> Self {
        Self {
            n_models,
            summary: SummaryConfig::new(input_dim),
            head_widths: vec![64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_models < 2 {
            return Err(Error::Config(format!(
                "evidential.n_models must be at least 2, got {}",
                self.n_models
            )));
        }
        if self.head_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("evidential.head_widths must be positive".into()));
        }
        self.summary.validate(1)
    }
}

/// Dirichlet concentrations for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletOutput {
    pub alpha: Vec<f64>,
}

impl DirichletOutput {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::Contract("a Dirichlet needs at least two concentrations".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a >= 1.0 && a.is_finite())) {
            return Err(Error::Contract(format!(
                "concentrations must be finite and >= 1, got {a}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Posterior model probabilities, `alpha_j / Σ alpha`.
    pub fn mean(&self) -> Vec<f64> {
        let total = self.total();
        self.alpha.iter().map(|a| a / total).collect()
    }

    /// Per-model epistemic variance `m_j (1 − m_j) / (α₀ + 1)`.
    pub fn variance(&self) -> Vec<f64> {
        let denom = self.total() + 1.0;
        self.mean().into_iter().map(|m| m * (1.0 - m) / denom).collect()
    }
}

/// Model probabilities and their epistemic variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPosterior {
    pub probabilities: Vec<f64>,
    pub variance: Vec<f64>,
}

pub fn model_posterior(output: &DirichletOutput) -> ModelPosterior {
    ModelPosterior {
        probabilities: output.mean(),
        variance: output.variance(),
    }
}

/// `log Dir(pi | alpha)`.
pub fn dirichlet_log_density(pi: &[f64], alpha: &[f64]) -> Result<f64> {
    if pi.len() != alpha.len() {
        return Err(Error::Contract(format!(
            "pi has {} entries, alpha has {}",
            pi.len(),
            alpha.len()
        )));
    }
    if pi.iter().any(|p| !(*p > 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Contract("pi must be strictly positive and sum to 1".into()));
    }
    if alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Contract("concentrations must be positive".into()));
    }
    let log_beta = alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(alpha.iter().sum());
    let kernel: f64 = pi.iter().zip(alpha).map(|(p, a)| (a - 1.0) * p.ln()).sum();
    Ok(kernel - log_beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidentialNet {
    config: EvidentialConfig,
    summary: SummaryNet,
    head: Mlp,
}

impl EvidentialNet {
    pub fn new(config: EvidentialConfig) -> Result<Self> {
        config.validate()?;
        let summary = SummaryNet::new(&format!("{EVIDENTIAL_PREFIX}.summary"), config.summary.clone());
        let head = Mlp::new(
            &format!("{EVIDENTIAL_PREFIX}.head"),
            config.summary.summary_dim,
            &config.head_widths,
            Some(config.n_models),
        );
        Ok(Self { config, summary, head })
    }

    pub fn config(&self) -> &EvidentialConfig {
        &self.config
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut Params, rng: &mut R) {
        self.summary.init(params, rng);
        self.head.init(params, 0.1, rng);
    }

    /// `B × J` concentrations `1 + softplus(head(summary))`.
    pub fn concentrations_graph(&self, graph: &mut Graph, params: &Params, datasets: &[Dataset]) -> Result<NodeId> {
        let (rows, n) = stack_datasets(datasets)?;
        let rows = graph.constant(rows);
        let s = self.summary.forward(graph, params, rows, n)?;
        let logits = self.head.forward(graph, params, s)?;
        let evidence = graph.softplus(logits);
        let ones = graph.constant(Tensor::filled(datasets.len(), self.config.n_models, 1.0));
        graph.add(evidence, ones)
    }

    /// Mean log score `−log m_true` as a graph node.
    pub fn loss_graph(&self, graph: &mut Graph, params: &Params, batch: &SimBatch) -> Result<NodeId> {
        let truth = batch
            .model_index
            .as_ref()
            .ok_or_else(|| Error::Contract("evidential loss needs model indices in the batch".into()))?;
        let j = self.config.n_models;
        let mut onehot = vec![0.0; truth.len() * j];
        for (row, &k) in truth.iter().enumerate() {
            if k >= j {
                return Err(Error::Contract(format!("model index {k} out of range for {j} models")));
            }
            onehot[row * j + k] = 1.0;
        }
        let alpha = self.concentrations_graph(graph, params, &batch.datasets)?;
        let log_alpha = graph.ln(alpha);
        let mask = graph.constant(Tensor::matrix(truth.len(), j, onehot)?);
        let picked = graph.mul(log_alpha, mask)?;
        let log_true = graph.sum_cols(picked);
        let total = graph.sum_cols(alpha);
        let log_total = graph.ln(total);
        let per_row = graph.sub(log_total, log_true)?;
        Ok(graph.mean(per_row))
    }

    pub fn forward(&self, params: &Params, dataset: &Dataset) -> Result<DirichletOutput> {
        let mut g = Graph::new();
        let alpha = self.concentrations_graph(&mut g, params, std::slice::from_ref(dataset))?;
        DirichletOutput::new(g.value(alpha).data().to_vec())
    }
}

/// An evidential network together with the candidate models it was trained
/// to distinguish.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelComparator {
    pub models: Vec<Model>,
    pub priors: Vec<PriorSpec>,
    net: EvidentialNet,
    pub params: Params,
}

impl ModelComparator {
    pub fn new(models: Vec<Model>, priors: Vec<PriorSpec>, config: EvidentialConfig, seed: u64) -> Result<Self> {
        let mut cmp = Self::validated(models, priors, config)?;
        cmp.net.init(&mut cmp.params, &mut stream(seed, u64::MAX - 2));
        Ok(cmp)
    }

    fn validated(models: Vec<Model>, priors: Vec<PriorSpec>, config: EvidentialConfig) -> Result<Self> {
        if models.len() != config.n_models || priors.len() != models.len() {
            return Err(Error::Config(format!(
                "{} models, {} priors and n_models = {} must agree",
                models.len(),
                priors.len(),
                config.n_models
            )));
        }
        for (m, p) in models.iter().zip(&priors) {
            m.validate()?;
            m.check_prior(p)?;
            if m.input_dim() != config.summary.input_dim {
                return Err(Error::Config(format!(
                    "model `{}` produces {} features, summary expects {}",
                    m.name(),
                    m.input_dim(),
                    config.summary.input_dim
                )));
            }
        }
        Ok(Self {
            models,
            priors,
            net: EvidentialNet::new(config)?,
            params: Params::new(),
        })
    }

    pub fn from_parts(
        models: Vec<Model>,
        priors: Vec<PriorSpec>,
        config: EvidentialConfig,
        params: Params,
    ) -> Result<Self> {
        let cmp = Self::validated(models, priors, config)?;
        let mut expected = Params::new();
        cmp.net.init(&mut expected, &mut stream(0, 0));
        check_layout(&expected, &params)?;
        Ok(Self { params, ..cmp })
    }

    pub fn net(&self) -> &EvidentialNet {
        &self.net
    }

    pub fn config(&self) -> &EvidentialConfig {
        self.net.config()
    }

    pub fn loss_graph(&self, graph: &mut Graph, batch: &SimBatch) -> Result<NodeId> {
        self.net.loss_graph(graph, &self.params, batch)
    }

    pub fn evaluate(&self, dataset: &Dataset) -> Result<DirichletOutput> {
        self.net.forward(&self.params, dataset)
    }
}

/// Dirichlet output for one dataset.
pub fn evidential_forward(net: &EvidentialNet, params: &Params, dataset: &Dataset) -> Result<DirichletOutput> {
    net.forward(params, dataset)
}

/// Batch evidential loss value.
pub fn evidential_loss(cmp: &ModelComparator, batch: &SimBatch) -> Result<f64> {
    let mut g = Graph::new();
    let loss = cmp.loss_graph(&mut g, batch)?;
    Ok(g.value(loss).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_variance_arithmetic() {
        let d = DirichletOutput::new(vec![2.0, 1.0, 1.0]).unwrap();
        assert_eq!(d.mean(), vec![0.5, 0.25, 0.25]);
        let big = DirichletOutput::new(vec![20.0, 10.0, 10.0]).unwrap();
        assert_eq!(big.mean(), d.mean());
        for (a, b) in big.variance().iter().zip(d.variance()) {
            assert!(*a < b);
        }
        // m(1-m)/(α₀+1) = 0.25/5
        assert!((d.variance()[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn posterior_of_simple_concentrations() {
        let p = model_posterior(&DirichletOutput::new(vec![1.0, 1.0]).unwrap());
        assert_eq!(p.probabilities, vec![0.5, 0.5]);
        let p = model_posterior(&DirichletOutput::new(vec![3.0, 1.0]).unwrap());
        assert_eq!(p.probabilities, vec![0.75, 0.25]);
        let q = model_posterior(&DirichletOutput::new(vec![1.0, 3.0]).unwrap());
        assert_eq!(q.probabilities, vec![0.25, 0.75]);
    }

    #[test]
    fn concentrations_below_one_rejected() {
        assert!(DirichletOutput::new(vec![0.5, 2.0]).is_err());
        assert!(DirichletOutput::new(vec![2.0]).is_err());
    }

    #[test]
    fn uniform_dirichlet_density() {
        // Dir(1,…,1) is uniform on the simplex with density (J−1)!
        let pi = [0.1, 0.2, 0.3, 0.4];
        let lp = dirichlet_log_density(&pi, &[1.0; 4]).unwrap();
        assert!((lp - 6f64.ln()).abs() < 1e-12);
        // Beta(2,2) at 0.5 is 1.5
        let lp = dirichlet_log_density(&[0.5, 0.5], &[2.0, 2.0]).unwrap();
        assert!((lp - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn off_simplex_rejected() {
        assert!(dirichlet_log_density(&[0.5, 0.6], &[1.0, 1.0]).is_err());
        assert!(dirichlet_log_density(&[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(dirichlet_log_density(&[0.5, 0.5], &[1.0]).is_err());
    }
}
