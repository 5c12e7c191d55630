use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::lfm::{simulate_trials, LfmParams, SimSettings, SimStats, TrialTable};
use super::prior::{normal, uniform, PriorSpec};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::summarynet::{encode_trials, TRIAL_FEATURES};

/// The generative models this toolkit can simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    /// Lévy-flight model: four drifts, alpha, threshold, start point, t0.
    Lfm,
    /// The same accumulator with Gaussian noise (alpha fixed at 2).
    Ddm,
    /// `dim` independent copies of the conjugate normal–normal model.
    GaussianMean { dim: usize },
}

impl Model {
    pub fn name(&self) -> String {
        match self {
            Model::Lfm => "lfm".into(),
            Model::Ddm => "ddm".into(),
            Model::GaussianMean { dim } => format!("gaussian_mean{dim}"),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let drifts = (1..=4).map(|c| format!("v{c}"));
        match self {
            Model::Lfm => drifts.chain(["alpha", "a", "zr", "t0"].map(String::from)).collect(),
            Model::Ddm => drifts.chain(["a", "zr", "t0"].map(String::from)).collect(),
            Model::GaussianMean { dim } => (1..=*dim).map(|i| format!("mu{i}")).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Lfm => 8,
            Model::Ddm => 7,
            Model::GaussianMean { dim } => *dim,
        }
    }

    /// Columns of the encoded per-observation rows fed to summary networks.
    pub fn input_dim(&self) -> usize {
        match self {
            Model::Lfm | Model::Ddm => TRIAL_FEATURES,
            Model::GaussianMean { dim } => *dim,
        }
    }

    pub fn is_response_time(&self) -> bool {
        matches!(self, Model::Lfm | Model::Ddm)
    }

    /// Admissible dataset sizes for training and validation.
    pub fn n_bounds(&self) -> (usize, usize) {
        if self.is_response_time() {
            (50, 1000)
        } else {
            (1, 10_000)
        }
    }

    pub fn default_prior(&self) -> PriorSpec {
        let drift = |c: usize| uniform(&format!("v{c}"), "evidence/s", -6.0, 6.0);
        let tail = [
            uniform("a", "evidence", 0.6, 3.0),
            uniform("zr", "", 0.3, 0.7),
            uniform("t0", "s", 0.2, 0.6),
        ];
        let components = match self {
            Model::Lfm => (1..=4)
                .map(drift)
                .chain([uniform("alpha", "", 1.0, 2.0)])
                .chain(tail)
                .collect(),
            Model::Ddm => (1..=4).map(drift).chain(tail).collect(),
            Model::GaussianMean { dim } => (1..=*dim).map(|i| normal(&format!("mu{i}"), "", 0.0, 1.0)).collect(),
        };
        PriorSpec::new(components).expect("default priors are valid")
    }

    pub fn validate(&self) -> Result<()> {
        if let Model::GaussianMean { dim } = self {
            if *dim == 0 {
                return Err(Error::Config("gaussian_mean needs dim >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn check_prior(&self, prior: &PriorSpec) -> Result<()> {
        prior.validate()?;
        if prior.dim() != self.dim() {
            return Err(Error::Config(format!(
                "prior for `{}` has {} components, model has {} parameters",
                self.name(),
                prior.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Maps a parameter vector in [`Model::param_names`] order to simulator
    /// parameters. Only defined for response-time models.
    pub fn lfm_params(&self, theta: &[f64]) -> Result<LfmParams> {
        if theta.len() != self.dim() {
            return Err(Error::Contract(format!(
                "`{}` expects {} parameters, got {}",
                self.name(),
                self.dim(),
                theta.len()
            )));
        }
        let v = [theta[0], theta[1], theta[2], theta[3]];
        let p = match self {
            Model::Lfm => LfmParams {
                v,
                alpha: theta[4],
                a: theta[5],
                zr: theta[6],
                t0: theta[7],
            },
            Model::Ddm => LfmParams {
                v,
                alpha: 2.0,
                a: theta[4],
                zr: theta[5],
                t0: theta[6],
            },
            Model::GaussianMean { .. } => {
                return Err(Error::Contract("gaussian model has no accumulator parameters".into()))
            }
        };
        Ok(p)
    }

    /// Draws one dataset of `n` observations given `theta`.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        theta: &[f64],
        n: usize,
        settings: &SimSettings,
        rng: &mut R,
        stats: &mut SimStats,
    ) -> Result<Dataset> {
        match self {
            Model::Lfm | Model::Ddm => {
                let p = self.lfm_params(theta)?;
                Ok(Dataset::Trials(simulate_trials(&p, n, settings, rng, stats)?))
            }
            Model::GaussianMean { dim } => {
                if theta.len() != *dim {
                    return Err(Error::Contract(format!("expected {dim} means, got {}", theta.len())));
                }
                if n == 0 {
                    return Err(Error::Contract("a dataset needs at least one observation".into()));
                }
                let mut values = Vec::with_capacity(n * dim);
                for _ in 0..n {
                    for &mu in theta {
                        let e: f64 = StandardNormal.sample(rng);
                        values.push(mu + e);
                    }
                }
                stats.trials += n as u64;
                Ok(Dataset::Points { dim: *dim, values })
            }
        }
    }
}

/// One observed or simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dataset {
    Trials(TrialTable),
    /// Row-major `n × dim` real observations.
    Points {
        dim: usize,
        values: Vec<f64>,
    },
}

impl Dataset {
    pub fn n(&self) -> usize {
        match self {
            Dataset::Trials(t) => t.n(),
            Dataset::Points { dim, values } => values.len() / dim,
        }
    }

    /// Per-observation feature rows, `n × input_dim`.
    pub fn encode(&self) -> Result<Tensor> {
        match self {
            Dataset::Trials(t) => encode_trials(t),
            Dataset::Points { dim, values } => Tensor::matrix(values.len() / dim, *dim, values.clone()),
        }
    }

    pub fn as_trials(&self) -> Option<&TrialTable> {
        match self {
            Dataset::Trials(t) => Some(t),
            Dataset::Points { .. } => None,
        }
    }

    /// Observations of coordinate `d` of a point dataset.
    pub fn column(&self, d: usize) -> Option<Vec<f64>> {
        match self {
            Dataset::Points { dim, values } if d < *dim => Some(values.iter().skip(d).step_by(*dim).copied().collect()),
            _ => None,
        }
    }
}

impl From<TrialTable> for Dataset {
    fn from(t: TrialTable) -> Self {
        Dataset::Trials(t)
    }
}
