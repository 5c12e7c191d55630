//! The JSON run configuration. Everything is validated before any work
//! starts; every error names the offending field.

use std::path::Path;

use amortize::evidentialnet::EvidentialConfig;
use amortize::flownet::FlowConfig;
use amortize::genmodels::{Model, PriorSpec, SimSettings};
use amortize::summarynet::SummaryConfig;
use amortize::trainer::{LrSchedule, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Model,
    /// Defaults to the model's standard prior.
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub summary: Option<SummaryConfig>,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub comparison: Option<ComparisonSection>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub sbc: SbcSection,
    #[serde(default)]
    pub recover: RecoverSection,
}

/// Flow architecture; dimensions come from the model and summary network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub n_blocks: usize,
    pub subnet_widths: Vec<usize>,
    pub clamp: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        let f = FlowConfig::new(2, 1);
        Self {
            n_blocks: f.n_blocks,
            subnet_widths: f.subnet_widths,
            clamp: f.clamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSection {
    pub models: Vec<Model>,
    /// One per model; each defaults to that model's standard prior.
    #[serde(default)]
    pub priors: Vec<Option<PriorSpec>>,
    #[serde(default = "default_head")]
    pub head_widths: Vec<usize>,
}

fn default_head() -> Vec<usize> {
    vec![64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    /// Defaults to the model's admissible range.
    #[serde(default)]
    pub n_range: Option<(usize, usize)>,
    #[serde(default)]
    pub lr: LrSchedule,
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            batch_size: 32,
            n_range: None,
            lr: LrSchedule::default(),
            checkpoint_every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub participants: usize,
    pub n_trials: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            participants: 10,
            n_trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbcSection {
    pub replications: usize,
    pub n: usize,
    pub draws: usize,
}

impl Default for SbcSection {
    fn default() -> Self {
        Self {
            replications: 1000,
            n: 200,
            draws: 99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverSection {
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub draws: usize,
}

impl Default for RecoverSection {
    fn default() -> Self {
        Self {
            n_grid: vec![50, 200, 800],
            replications: 100,
            draws: 500,
        }
    }
}

fn at<T>(path: &str, r: amortize::Result<T>) -> AppResult<T> {
    r.map_err(|e| AppError::config(path, e.to_string()))
}

impl Config {
    /// Default configuration for `model`.
    pub fn for_model(model: Model) -> Self {
        Self {
            model,
            prior: None,
            sim: SimSettings::default(),
            summary: None,
            flow: FlowSection::default(),
            comparison: None,
            train: TrainSection::default(),
            seed: 0,
            simulate: SimulateSection::default(),
            sbc: SbcSection::default(),
            recover: RecoverSection::default(),
        }
    }

    pub fn from_json(text: &str) -> AppResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            AppError::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            AppError::Config { path: field, msg } => AppError::config(format!("{}: {field}", path.display()), msg),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        format!("{digest:x}")
    }

    pub fn prior(&self) -> PriorSpec {
        self.prior.clone().unwrap_or_else(|| self.model.default_prior())
    }

    pub fn summary_config(&self) -> SummaryConfig {
        self.summary
            .clone()
            .unwrap_or_else(|| SummaryConfig::new(self.model.input_dim()))
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            n_blocks: self.flow.n_blocks,
            subnet_widths: self.flow.subnet_widths.clone(),
            clamp: self.flow.clamp,
            ..FlowConfig::new(self.model.dim(), self.summary_config().summary_dim)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            batch_size: self.train.batch_size,
            n_range: self.train.n_range.unwrap_or_else(|| self.model.n_bounds()),
            lr: self.train.lr,
            seed: self.seed,
            checkpoint_every: self.train.checkpoint_every,
        }
    }

    /// Candidate models with their priors and the evidential architecture.
    pub fn comparison_setup(&self) -> AppResult<(Vec<Model>, Vec<PriorSpec>, EvidentialConfig)> {
        let c = self
            .comparison
            .as_ref()
            .ok_or_else(|| AppError::config("comparison", "section is required for model comparison"))?;
        let priors = (0..c.models.len())
            .map(|i| {
                c.priors
                    .get(i)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| c.models[i].default_prior())
            })
            .collect();
        let first = c.models.first().copied().unwrap_or(self.model);
        let summary = self
            .summary
            .clone()
            .unwrap_or_else(|| SummaryConfig::new(first.input_dim()));
        let cfg = EvidentialConfig {
            n_models: c.models.len(),
            summary,
            head_widths: c.head_widths.clone(),
        };
        Ok((c.models.clone(), priors, cfg))
    }

    pub fn validate(&self) -> AppResult<()> {
        at("model", self.model.validate())?;
        if let Some(p) = &self.prior {
            at("prior", p.validate())?;
            at("prior", self.model.check_prior(p))?;
        }
        at("sim", self.sim.validate())?;
        let summary = self.summary_config();
        if summary.input_dim != self.model.input_dim() && self.comparison.is_none() {
            return Err(AppError::config(
                "summary.input_dim",
                format!("`{}` data has {} features", self.model.name(), self.model.input_dim()),
            ));
        }
        at("summary", summary.validate(self.model.dim()))?;
        at("flow", self.flow_config().validate())?;
        at("train", self.train_config().validate())?;
        let (lo, hi) = self.train_config().n_range;
        let (min, max) = self.model.n_bounds();
        if lo == 0 || lo > hi || lo < min || hi > max {
            return Err(AppError::config(
                "train.n_range",
                format!("[{lo}, {hi}] must be a non-empty range inside [{min}, {max}]"),
            ));
        }
        if self.simulate.participants == 0 || self.simulate.n_trials == 0 {
            return Err(AppError::config(
                "simulate",
                "participants and n_trials must be positive",
            ));
        }
        if self.sbc.replications == 0 || self.sbc.n == 0 || self.sbc.draws == 0 {
            return Err(AppError::config("sbc", "replications, n and draws must be positive"));
        }
        if self.recover.n_grid.is_empty() || self.recover.n_grid.contains(&0) {
            return Err(AppError::config(
                "recover.n_grid",
                "needs at least one positive trial count",
            ));
        }
        if self.recover.replications < 2 || self.recover.draws == 0 {
            return Err(AppError::config("recover", "needs at least 2 replications and 1 draw"));
        }
        if let Some(c) = &self.comparison {
            if c.models.len() < 2 {
                return Err(AppError::config(
                    "comparison.models",
                    "at least two candidate models are needed",
                ));
            }
            if c.priors.len() > c.models.len() {
                return Err(AppError::config("comparison.priors", "more priors than models"));
            }
            for (i, m) in c.models.iter().enumerate() {
                at(&format!("comparison.models[{i}]"), m.validate())?;
                if let Some(Some(p)) = c.priors.get(i) {
                    at(&format!("comparison.priors[{i}]"), m.check_prior(p))?;
                }
            }
            let (_, _, ecfg) = self.comparison_setup()?;
            at("comparison", ecfg.validate())?;
        }
        Ok(())
    }
}
