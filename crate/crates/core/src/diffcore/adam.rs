use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::params::Params;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self::with_hyper(lr, 0.9, 0.999, 1e-8).expect("default Adam hyperparameters are valid")
    }

    pub fn with_hyper(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if !open_unit(beta1) || !open_unit(beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in (0, 1), got ({beta1}, {beta2})"
            )));
        }
        if !(lr > 0.0 && eps > 0.0) {
            return Err(Error::Config(format!(
                "Adam lr and eps must be positive, got ({lr}, {eps})"
            )));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        })
    }

    /// Applies one update to every parameter that has a gradient.
    ///
    /// Gradients are validated before anything is mutated, so a rejected
    /// step leaves both `params` and the moments untouched.
    pub fn step(&mut self, params: &mut Params, grads: &Gradients) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("`{name}`: parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { param: name.clone() });
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);

        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let zeros = || Tensor::new(g.shape().to_vec(), vec![0.0; g.len()]).expect("grad shape");
            let m = self.first_moment.entry(name.clone()).or_insert_with(zeros);
            let v = self.second_moment.entry(name.clone()).or_insert_with(zeros);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
