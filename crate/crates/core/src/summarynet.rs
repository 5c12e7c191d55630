//! Permutation-invariant summary network: a per-observation encoder, mean
//! pooling over observations, and a decoder to a fixed-length summary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Mlp, NodeId, Params, Tensor};
use crate::error::{Error, Result};
use crate::genmodels::{Dataset, TrialTable, N_CONDITIONS};

/// Encoded trial width: rt, signed choice, one-hot condition.
pub const TRIAL_FEATURES: usize = 2 + N_CONDITIONS;

/// One row per trial: `[rt, 2·choice − 1, onehot(condition)]`.
pub fn encode_trials(table: &TrialTable) -> Result<Tensor> {
    let mut data = Vec::with_capacity(table.n() * TRIAL_FEATURES);
    for (i, t) in table.trials().iter().enumerate() {
        if !(1..=N_CONDITIONS as u8).contains(&t.condition) {
            return Err(Error::data(Some(i + 1), format!("unknown condition {}", t.condition)));
        }
        data.push(t.rt);
        data.push(2.0 * t.choice as f64 - 1.0);
        for c in 1..=N_CONDITIONS as u8 {
            data.push(if c == t.condition { 1.0 } else { 0.0 });
        }
    }
    Tensor::matrix(table.n(), TRIAL_FEATURES, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    #[serde(default)]
    pub pool: PoolKind,
    pub summary_dim: usize,
    #[serde(default = "yes")]
    pub include_log_n: bool,
}

fn yes() -> bool {
    true
}

impl SummaryConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            encoder_widths: vec![64, 64],
            decoder_widths: vec![64, 64],
            pool: PoolKind::Mean,
            summary_dim: 32,
            include_log_n: true,
        }
    }

    pub fn validate(&self, min_summary_dim: usize) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("summary.input_dim must be positive".into()));
        }
        if self.encoder_widths.is_empty() {
            return Err(Error::Config("summary.encoder_widths needs at least one layer".into()));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(Error::Config("summary layer widths must be positive".into()));
        }
        if self.summary_dim < min_summary_dim.max(1) {
            return Err(Error::Config(format!(
                "summary.summary_dim ({}) must be at least the parameter count ({min_summary_dim})",
                self.summary_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryOutput {
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryNet {
    config: SummaryConfig,
    encoder: Mlp,
    decoder: Mlp,
}

/// `ln N / ln 1000`, the dataset-size input appended after pooling.
pub fn log_n_feature(n: usize) -> f64 {
    (n as f64).ln() / 1000f64.ln()
}

/// Stacks the encoded rows of equally sized datasets into one
/// `(B·N) × input_dim` tensor.
pub fn stack_datasets(datasets: &[Dataset]) -> Result<(Tensor, usize)> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::Contract("cannot stack an empty list of datasets".into()))?;
    let n = first.n();
    let mut cols = 0;
    let mut data = Vec::new();
    for (i, d) in datasets.iter().enumerate() {
        if d.n() != n {
            return Err(Error::Contract(format!(
                "datasets in one batch must share N: dataset {i} has {} rows, expected {n}",
                d.n()
            )));
        }
        let rows = d.encode()?;
        cols = rows.cols();
        data.extend(rows.into_data());
    }
    Ok((Tensor::matrix(datasets.len() * n, cols, data)?, n))
}

impl SummaryNet {
    pub fn new(prefix: &str, config: SummaryConfig) -> Self {
        let encoder = Mlp::new(
            &format!("{prefix}.encoder"),
            config.input_dim,
            &config.encoder_widths,
            None,
        );
        let pooled = *config.encoder_widths.last().expect("validated encoder") + usize::from(config.include_log_n);
        let decoder = Mlp::new(
            &format!("{prefix}.decoder"),
            pooled,
            &config.decoder_widths,
            Some(config.summary_dim),
        );
        Self {
            config,
            encoder,
            decoder,
        }
    }

    pub fn config(&self) -> &SummaryConfig {
        &self.config
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut Params, rng: &mut R) {
        self.encoder.init(params, 1.0, rng);
        self.decoder.init(params, 1.0, rng);
    }

    /// `rows` holds `B` datasets of `n` consecutive rows each; returns the
    /// `B × summary_dim` summaries.
    pub fn forward(&self, graph: &mut Graph, params: &Params, rows: NodeId, n: usize) -> Result<NodeId> {
        let width = graph.value(rows).cols();
        if width != self.config.input_dim {
            return Err(Error::dim(
                "summarize",
                format!("rows have {width} features, network expects {}", self.config.input_dim),
            ));
        }
        let h = self.encoder.forward(graph, params, rows)?;
        let pooled = match self.config.pool {
            PoolKind::Mean => graph.mean_groups(h, n)?,
        };
        let pooled = if self.config.include_log_n {
            let b = graph.value(pooled).rows();
            let log_n = graph.constant(Tensor::filled(b, 1, log_n_feature(n)));
            graph.concat(pooled, log_n)?
        } else {
            pooled
        };
        self.decoder.forward(graph, params, pooled)
    }

    /// Summaries for a batch of equally sized datasets.
    pub fn forward_datasets(&self, graph: &mut Graph, params: &Params, datasets: &[Dataset]) -> Result<NodeId> {
        let (rows, n) = stack_datasets(datasets)?;
        let rows = graph.constant(rows);
        self.forward(graph, params, rows, n)
    }

    pub fn summarize(&self, params: &Params, dataset: &Dataset) -> Result<SummaryOutput> {
        let mut g = Graph::new();
        let s = self.forward_datasets(&mut g, params, std::slice::from_ref(dataset))?;
        Ok(SummaryOutput {
            s: g.value(s).data().to_vec(),
        })
    }
}

/// Summary of one trial table.
pub fn summarize(net: &SummaryNet, params: &Params, table: &TrialTable) -> Result<SummaryOutput> {
    net.summarize(params, &Dataset::Trials(table.clone()))
}
