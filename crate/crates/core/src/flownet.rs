//! Conditional affine-coupling flow between standardized parameters and a
//! standard-normal latent space.
//!
//! Each block keeps one half of the vector fixed and transforms the other:
//! `z₂ = x₂ ⊙ exp(clamp(sc(x₁, c))) + tr(x₁, c)`. Blocks alternate which half
//! is transformed. Log-scales pass through the soft clamp
//! `clamp(u) = (2·s_max/π)·atan(u/s_max)`, which keeps each log-scale inside
//! `(−s_max, s_max)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Dense, Graph, Mlp, NodeId, Params, Tensor};
use crate::error::{Error, Result};
use crate::genmodels::PriorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dim: usize,
    pub n_blocks: usize,
    pub subnet_widths: Vec<usize>,
    /// Soft clamp bound on per-dimension log-scales.
    pub clamp: f64,
    pub condition_dim: usize,
}

impl FlowConfig {
    pub fn new(dim: usize, condition_dim: usize) -> Self {
        Self {
            dim,
            n_blocks: 6,
            subnet_widths: vec![64, 64],
            clamp: 1.9,
            condition_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("flow.dim must be at least 2, got {}", self.dim)));
        }
        if self.n_blocks == 0 {
            return Err(Error::Config("flow.n_blocks must be at least 1".into()));
        }
        if self.subnet_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("flow.subnet_widths must be positive".into()));
        }
        if !(self.clamp > 0.0 && self.clamp.is_finite()) {
            return Err(Error::Config(format!(
                "flow.clamp must be positive, got {}",
                self.clamp
            )));
        }
        Ok(())
    }

    /// Largest possible `|log_det|` of a full pass.
    pub fn log_det_bound(&self) -> f64 {
        let half = self.dim - self.dim / 2;
        self.n_blocks as f64 * half as f64 * self.clamp
    }
}

/// Affine map to and from the flow's standardized parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            loc: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn new(loc: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if loc.len() != scale.len() {
            return Err(Error::Config("standardizer loc and scale lengths differ".into()));
        }
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("standardizer scales must be positive, got {s}")));
        }
        Ok(Self { loc, scale })
    }

    /// Sample mean and standard deviation of `draws` prior draws.
    pub fn from_prior<R: Rng + ?Sized>(prior: &PriorSpec, draws: usize, rng: &mut R) -> Result<Self> {
        prior.validate()?;
        let d = prior.dim();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for _ in 0..draws {
            for (j, x) in prior.sample(rng).into_iter().enumerate() {
                sum[j] += x;
                sq[j] += x * x;
            }
        }
        let n = draws as f64;
        let loc: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&loc)
            .map(|(s, m)| ((s / n - m * m) * n / (n - 1.0)).max(0.0).sqrt())
            .collect();
        Self::new(loc, scale)
    }

    pub fn dim(&self) -> usize {
        self.loc.len()
    }

    pub fn standardize(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.loc.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn destandardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.loc.iter().zip(&self.scale))
            .map(|(x, (m, s))| m + s * x)
            .collect()
    }

    /// `Σ log scale_d`, the Jacobian term of the standardization.
    pub fn log_scale_sum(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }
}

/// `S × D` posterior draws, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PosteriorDraws {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "draw matrix shape");
        Self { dim, data }
    }

    pub fn n_draws(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.data.iter().skip(d).step_by(self.dim).copied().collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.n_draws() as f64;
        (0..self.dim).map(|d| self.column(d).iter().sum::<f64>() / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CouplingBlock {
    /// Whether the upper part (`split..dim`) is transformed in this block.
    transforms_upper: bool,
    split: usize,
    hidden: Mlp,
    scale_head: Dense,
    shift_head: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingFlow {
    config: FlowConfig,
    blocks: Vec<CouplingBlock>,
}

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

impl CouplingFlow {
    pub fn new(prefix: &str, config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.dim;
        let split = dim / 2;
        let blocks = (0..config.n_blocks)
            .map(|k| {
                let transforms_upper = k % 2 == 0;
                let (cond_w, out_w) = if transforms_upper {
                    (split, dim - split)
                } else {
                    (dim - split, split)
                };
                let p = format!("{prefix}.block{k}");
                let hidden = Mlp::new(&p, cond_w + config.condition_dim, &config.subnet_widths, None);
                let fan_in = hidden.output_dim(cond_w + config.condition_dim);
                CouplingBlock {
                    transforms_upper,
                    split,
                    hidden,
                    scale_head: Dense::new(format!("{p}.scale"), fan_in, out_w),
                    shift_head: Dense::new(format!("{p}.shift"), fan_in, out_w),
                }
            })
            .collect();
        Ok(Self { config, blocks })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    /// Random hidden layers; heads scaled by `head_gain` (0 gives the
    /// identity map).
    pub fn init<R: Rng + ?Sized>(&self, params: &mut Params, head_gain: f64, rng: &mut R) {
        for b in &self.blocks {
            b.hidden.init(params, 1.0, rng);
            b.scale_head.init(params, head_gain, rng);
            b.shift_head.init(params, head_gain, rng);
        }
    }

    fn heads(
        &self,
        block: &CouplingBlock,
        graph: &mut Graph,
        params: &Params,
        fixed: NodeId,
        cond: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let input = graph.concat(fixed, cond)?;
        let h = block.hidden.forward(graph, params, input)?;
        let raw = block.scale_head.forward(graph, params, h)?;
        let s_max = self.config.clamp;
        let shrunk = graph.scale(raw, 1.0 / s_max);
        let bent = graph.atan(shrunk);
        let log_scale = graph.scale(bent, 2.0 * s_max / PI);
        let shift = block.shift_head.forward(graph, params, h)?;
        Ok((log_scale, shift))
    }

    fn check_inputs(&self, graph: &Graph, x: NodeId, cond: NodeId) -> Result<()> {
        let (xv, cv) = (graph.value(x), graph.value(cond));
        if xv.cols() != self.config.dim || cv.cols() != self.config.condition_dim || xv.rows() != cv.rows() {
            return Err(Error::dim(
                "flow",
                format!(
                    "inputs {:?} and condition {:?} do not match dim {} / condition_dim {}",
                    xv.shape(),
                    cv.shape(),
                    self.config.dim,
                    self.config.condition_dim
                ),
            ));
        }
        if !xv.is_finite() || !cv.is_finite() {
            return Err(Error::Numeric("non-finite input to flow".into()));
        }
        Ok(())
    }

    /// Standardized parameters `x` (`B × D`) to latents, with per-row
    /// `log|det ∂z/∂x|` (`B × 1`).
    pub fn forward_graph(
        &self,
        graph: &mut Graph,
        params: &Params,
        x: NodeId,
        cond: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        self.check_inputs(graph, x, cond)?;
        let mut h = x;
        let mut log_det: Option<NodeId> = None;
        for block in &self.blocks {
            let (lower, upper) = graph.split(h, block.split)?;
            let (fixed, moving) = if block.transforms_upper {
                (lower, upper)
            } else {
                (upper, lower)
            };
            let (log_scale, shift) = self.heads(block, graph, params, fixed, cond)?;
            let e = graph.exp(log_scale);
            let scaled = graph.mul(moving, e)?;
            let moved = graph.add(scaled, shift)?;
            h = if block.transforms_upper {
                graph.concat(fixed, moved)?
            } else {
                graph.concat(moved, fixed)?
            };
            let ld = graph.sum_cols(log_scale);
            log_det = Some(match log_det {
                Some(acc) => graph.add(acc, ld)?,
                None => ld,
            });
        }
        Ok((h, log_det.expect("at least one block")))
    }

    /// Latents back to standardized parameters, with per-row
    /// `log|det ∂x/∂z|`.
    pub fn inverse_graph(
        &self,
        graph: &mut Graph,
        params: &Params,
        z: NodeId,
        cond: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        self.check_inputs(graph, z, cond)?;
        let mut h = z;
        let mut log_det: Option<NodeId> = None;
        for block in self.blocks.iter().rev() {
            let (lower, upper) = graph.split(h, block.split)?;
            let (fixed, moved) = if block.transforms_upper {
                (lower, upper)
            } else {
                (upper, lower)
            };
            let (log_scale, shift) = self.heads(block, graph, params, fixed, cond)?;
            let centred = graph.sub(moved, shift)?;
            let neg = graph.neg(log_scale);
            let inv = graph.exp(neg);
            let restored = graph.mul(centred, inv)?;
            h = if block.transforms_upper {
                graph.concat(fixed, restored)?
            } else {
                graph.concat(restored, fixed)?
            };
            let ld = graph.sum_cols(neg);
            log_det = Some(match log_det {
                Some(acc) => graph.add(acc, ld)?,
                None => ld,
            });
        }
        Ok((h, log_det.expect("at least one block")))
    }

    /// `(z, log_det)` for one standardized vector.
    pub fn forward(&self, params: &Params, x: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut g = Graph::new();
        let xn = g.constant(Tensor::row(x));
        let cn = g.constant(Tensor::row(cond));
        let (z, ld) = self.forward_graph(&mut g, params, xn, cn)?;
        Ok((g.value(z).data().to_vec(), g.value(ld).data()[0]))
    }

    /// `(x, log_det)` for one latent vector; `log_det` is that of the
    /// inverse map.
    pub fn inverse(&self, params: &Params, z: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut g = Graph::new();
        let zn = g.constant(Tensor::row(z));
        let cn = g.constant(Tensor::row(cond));
        let (x, ld) = self.inverse_graph(&mut g, params, zn, cn)?;
        Ok((g.value(x).data().to_vec(), g.value(ld).data()[0]))
    }

    /// Per-row negative log posterior density in raw parameter space
    /// (`B × 1`), given standardized parameters and conditions.
    pub fn neg_log_density_graph(
        &self,
        graph: &mut Graph,
        params: &Params,
        standardizer: &Standardizer,
        x: NodeId,
        cond: NodeId,
    ) -> Result<NodeId> {
        let (z, log_det) = self.forward_graph(graph, params, x, cond)?;
        let sq = graph.square(z);
        let energy = graph.sum_cols(sq);
        let half = graph.scale(energy, 0.5);
        let rows = graph.value(x).rows();
        let constant = 0.5 * self.config.dim as f64 * LOG_2PI + standardizer.log_scale_sum();
        let c = graph.constant(Tensor::filled(rows, 1, constant));
        let base = graph.add(half, c)?;
        graph.sub(base, log_det)
    }

    /// `log p(theta | s)` for a raw (unstandardized) parameter vector.
    pub fn log_posterior(
        &self,
        params: &Params,
        standardizer: &Standardizer,
        theta: &[f64],
        cond: &[f64],
    ) -> Result<f64> {
        if theta.len() != self.config.dim || standardizer.dim() != self.config.dim {
            return Err(Error::dim(
                "log_posterior",
                format!("expected {} parameters, got {}", self.config.dim, theta.len()),
            ));
        }
        let x = standardizer.standardize(theta);
        let mut g = Graph::new();
        let xn = g.constant(Tensor::row(&x));
        let cn = g.constant(Tensor::row(cond));
        let nll = self.neg_log_density_graph(&mut g, params, standardizer, xn, cn)?;
        Ok(-g.value(nll).data()[0])
    }

    /// `n_draws` posterior draws in raw parameter space.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        params: &Params,
        standardizer: &Standardizer,
        cond: &[f64],
        n_draws: usize,
        rng: &mut R,
    ) -> Result<PosteriorDraws> {
        let d = self.config.dim;
        if n_draws == 0 {
            return Ok(PosteriorDraws::new(d, Vec::new()));
        }
        let z: Vec<f64> = (0..n_draws * d).map(|_| StandardNormal.sample(rng)).collect();
        let cond_rows: Vec<f64> = (0..n_draws).flat_map(|_| cond.iter().copied()).collect();
        let mut g = Graph::new();
        let zn = g.constant(Tensor::matrix(n_draws, d, z)?);
        let cn = g.constant(Tensor::matrix(n_draws, cond.len(), cond_rows)?);
        let (x, _) = self.inverse_graph(&mut g, params, zn, cn)?;
        let data = g
            .value(x)
            .data()
            .chunks_exact(d)
            .flat_map(|row| standardizer.destandardize(row))
            .collect();
        Ok(PosteriorDraws::new(d, data))
    }
}
