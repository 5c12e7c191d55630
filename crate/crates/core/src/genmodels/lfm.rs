//! Lévy-flight evidence accumulation: Euler–Maruyama walk with symmetric
//! alpha-stable increments between an absorbing lower bound at 0 and an
//! upper bound at `a`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::stable::SymmetricStable;
use crate::error::{Error, Result};

pub const N_CONDITIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfmParams {
    /// Drift rate per condition, evidence units per second.
    pub v: [f64; N_CONDITIONS],
    /// Stability exponent of the noise, `1 < alpha <= 2`.
    pub alpha: f64,
    /// Decision threshold.
    pub a: f64,
    /// Starting point relative to the threshold.
    pub zr: f64,
    /// Non-decision time in seconds.
    pub t0: f64,
}

impl LfmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::Domain(format!("threshold a must be positive, got {}", self.a)));
        }
        if !(self.zr > 0.0 && self.zr < 1.0) {
            return Err(Error::Domain(format!(
                "relative start zr must lie in (0, 1), got {}",
                self.zr
            )));
        }
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::Domain(format!("alpha must lie in (1, 2], got {}", self.alpha)));
        }
        if !(self.t0 >= 0.0 && self.t0.is_finite()) {
            return Err(Error::Domain(format!("t0 must be non-negative, got {}", self.t0)));
        }
        if let Some(v) = self.v.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("drift rates must be finite, got {v}")));
        }
        Ok(())
    }
}

/// Choice coding: 0 lower bound, 1 upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub rt: f64,
    pub choice: u8,
    /// 1-based condition id.
    pub condition: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTable {
    trials: Vec<Trial>,
}

impl TrialTable {
    pub fn new(trials: Vec<Trial>) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::data(None, "a trial table needs at least one trial"));
        }
        for (i, t) in trials.iter().enumerate() {
            if !(t.rt > 0.0 && t.rt.is_finite()) {
                return Err(Error::data(Some(i + 1), format!("rt must be positive, got {}", t.rt)));
            }
            if t.choice > 1 {
                return Err(Error::data(
                    Some(i + 1),
                    format!("choice must be 0 or 1, got {}", t.choice),
                ));
            }
            if !(1..=N_CONDITIONS as u8).contains(&t.condition) {
                return Err(Error::data(
                    Some(i + 1),
                    format!("condition must lie in 1..={N_CONDITIONS}, got {}", t.condition),
                ));
            }
        }
        Ok(Self { trials })
    }

    pub fn n(&self) -> usize {
        self.trials.len()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn into_trials(self) -> Vec<Trial> {
        self.trials
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    /// Euler step in seconds.
    pub dt: f64,
    /// Walks that have not been absorbed by `t_max` are discarded and resampled.
    pub t_max: f64,
    /// Fraction of timed-out trials above which a run aborts.
    #[serde(default = "default_timeout_fraction")]
    pub max_timeout_fraction: f64,
}

fn default_timeout_fraction() -> f64 {
    0.01
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            dt: 0.001,
            t_max: 10.0,
            max_timeout_fraction: default_timeout_fraction(),
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt >= self.t_max {
            return Err(Error::Contract(format!(
                "dt ({}) must be smaller than t_max ({})",
                self.dt, self.t_max
            )));
        }
        if !(0.0..=1.0).contains(&self.max_timeout_fraction) {
            return Err(Error::Config(format!(
                "max_timeout_fraction must lie in [0, 1], got {}",
                self.max_timeout_fraction
            )));
        }
        Ok(())
    }
}

/// Simulated-trial bookkeeping: accepted trials and discarded timeouts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub trials: u64,
    pub timeouts: u64,
}

impl SimStats {
    pub fn merge(&mut self, other: SimStats) {
        self.trials += other.trials;
        self.timeouts += other.timeouts;
    }

    pub fn timeout_fraction(&self) -> f64 {
        let attempts = self.trials + self.timeouts;
        if attempts == 0 {
            0.0
        } else {
            self.timeouts as f64 / attempts as f64
        }
    }

    pub fn check(&self, limit: f64) -> Result<()> {
        if self.timeout_fraction() > limit {
            return Err(Error::TimeoutBudget {
                timeouts: self.timeouts,
                trials: self.trials + self.timeouts,
                limit: 100.0 * limit,
            });
        }
        Ok(())
    }
}

/// One walk; `None` when no bound is reached by `t_max`.
fn walk<R: Rng + ?Sized>(
    drift: f64,
    p: &LfmParams,
    noise: &SymmetricStable,
    settings: &SimSettings,
    rng: &mut R,
) -> Option<(u8, f64)> {
    let dt = settings.dt;
    let step_drift = drift * dt;
    let noise_scale = dt.powf(1.0 / p.alpha);
    let max_steps = (settings.t_max / dt).ceil() as u64;
    let mut x = p.zr * p.a;
    for step in 1..=max_steps {
        x += step_drift + noise_scale * noise.sample(rng);
        if x >= p.a {
            return Some((1, step as f64 * dt));
        }
        if x <= 0.0 {
            return Some((0, step as f64 * dt));
        }
    }
    None
}

/// Simulates one trial in `condition` (1-based), resampling timed-out walks.
///
/// Timeouts are added to `stats`. A trial that keeps timing out is abandoned
/// once its own resample count exceeds the budget that a 1000-trial run
/// would tolerate, so a pathological parameter set cannot loop forever.
pub fn simulate_lfm_trial<R: Rng + ?Sized>(
    p: &LfmParams,
    condition: u8,
    settings: &SimSettings,
    rng: &mut R,
    stats: &mut SimStats,
) -> Result<Trial> {
    settings.validate()?;
    p.validate()?;
    if !(1..=N_CONDITIONS as u8).contains(&condition) {
        return Err(Error::Contract(format!(
            "condition {condition} outside 1..={N_CONDITIONS}"
        )));
    }
    let noise = SymmetricStable::new(p.alpha)?;
    simulate_checked(p, condition, &noise, settings, rng, stats)
}

fn simulate_checked<R: Rng + ?Sized>(
    p: &LfmParams,
    condition: u8,
    noise: &SymmetricStable,
    settings: &SimSettings,
    rng: &mut R,
    stats: &mut SimStats,
) -> Result<Trial> {
    let drift = p.v[condition as usize - 1];
    let max_retries = ((1000.0 * settings.max_timeout_fraction).ceil() as u64).max(1);
    let mut retries = 0;
    loop {
        if let Some((choice, decision_time)) = walk(drift, p, noise, settings, rng) {
            stats.trials += 1;
            return Ok(Trial {
                rt: p.t0 + decision_time,
                choice,
                condition,
            });
        }
        stats.timeouts += 1;
        retries += 1;
        if retries > max_retries {
            return Err(Error::TimeoutBudget {
                timeouts: retries,
                trials: retries,
                limit: 100.0 * settings.max_timeout_fraction,
            });
        }
    }
}

/// `n` trials spread as evenly as possible over the four conditions, in
/// random order.
pub fn simulate_trials<R: Rng + ?Sized>(
    p: &LfmParams,
    n: usize,
    settings: &SimSettings,
    rng: &mut R,
    stats: &mut SimStats,
) -> Result<TrialTable> {
    settings.validate()?;
    p.validate()?;
    if n == 0 {
        return Err(Error::Contract("a dataset needs at least one trial".into()));
    }
    let noise = SymmetricStable::new(p.alpha)?;
    let mut trials = Vec::with_capacity(n);
    for i in 0..n {
        let condition = (i % N_CONDITIONS) as u8 + 1;
        trials.push(simulate_checked(p, condition, &noise, settings, rng, stats)?);
    }
    trials.shuffle(rng);
    TrialTable::new(trials)
}

/// `n_per_condition` trials in each of the four conditions, shuffled.
pub fn simulate_dataset<R: Rng + ?Sized>(
    p: &LfmParams,
    n_per_condition: usize,
    settings: &SimSettings,
    rng: &mut R,
    stats: &mut SimStats,
) -> Result<TrialTable> {
    if n_per_condition == 0 {
        return Err(Error::Contract("n_per_condition must be at least 1".into()));
    }
    simulate_trials(p, N_CONDITIONS * n_per_condition, settings, rng, stats)
}
