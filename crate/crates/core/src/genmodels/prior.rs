use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum PriorDist {
    Uniform { lower: f64, upper: f64 },
    Normal { mean: f64, sd: f64 },
}

impl PriorDist {
    pub fn mean(&self) -> f64 {
        match *self {
            PriorDist::Uniform { lower, upper } => 0.5 * (lower + upper),
            PriorDist::Normal { mean, .. } => mean,
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            PriorDist::Uniform { lower, upper } => (upper - lower) / 12f64.sqrt(),
            PriorDist::Normal { sd, .. } => sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorComponent {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    #[serde(flatten)]
    pub dist: PriorDist,
}

/// Independent per-parameter priors, in parameter-vector order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub components: Vec<PriorComponent>,
}

impl PriorSpec {
    pub fn new(components: Vec<PriorComponent>) -> Result<Self> {
        let spec = Self { components };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.components.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("prior has no components".into()));
        }
        let mut seen = HashSet::new();
        for (i, c) in self.components.iter().enumerate() {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!(
                    "prior.components[{i}]: duplicate name `{}`",
                    c.name
                )));
            }
            match c.dist {
                PriorDist::Uniform { lower, upper } => {
                    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                        return Err(Error::Config(format!(
                            "prior.components[{i}] (`{}`): uniform bounds need finite lower < upper, got [{lower}, {upper}]",
                            c.name
                        )));
                    }
                }
                PriorDist::Normal { mean, sd } => {
                    if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
                        return Err(Error::Config(format!(
                            "prior.components[{i}] (`{}`): normal needs finite mean and sd > 0, got ({mean}, {sd})",
                            c.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// One independent draw per component.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| match c.dist {
                PriorDist::Uniform { lower, upper } => {
                    Uniform::new(lower, upper).expect("validated bounds").sample(rng)
                }
                PriorDist::Normal { mean, sd } => Normal::new(mean, sd).expect("validated sd").sample(rng),
            })
            .collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.dist.mean()).collect()
    }
}

/// Validated draw from `spec`.
pub fn sample_prior<R: Rng + ?Sized>(spec: &PriorSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    Ok(spec.sample(rng))
}

pub(crate) fn uniform(name: &str, unit: &str, lower: f64, upper: f64) -> PriorComponent {
    PriorComponent {
        name: name.into(),
        unit: unit.into(),
        dist: PriorDist::Uniform { lower, upper },
    }
}

pub(crate) fn normal(name: &str, unit: &str, mean: f64, sd: f64) -> PriorComponent {
    PriorComponent {
        name: name.into(),
        unit: unit.into(),
        dist: PriorDist::Normal { mean, sd },
    }
}
