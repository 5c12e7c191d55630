use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::Result;

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params(BTreeMap<String, Tensor>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.0.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    /// Moves every entry of `other` in, replacing same-named entries.
    pub fn extend(&mut self, other: Params) {
        self.0.extend(other.0);
    }

    /// Entries whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Params {
        Params(
            self.0
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }

    /// Registers `name` in `graph`; panics if the parameter was never
    /// initialised, which is a programming error in the network code.
    pub fn node(&self, graph: &mut Graph, name: &str) -> NodeId {
        let t = self
            .0
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from store"));
        graph.param(name, t)
    }
}

/// Fully connected layer `x·W + b`, weights stored as `{prefix}.w` (`in × out`)
/// and `{prefix}.b` (`1 × out`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub prefix: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(prefix: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Self {
            prefix: prefix.into(),
            inputs,
            outputs,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    /// Glorot-normal weights scaled by `gain`, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut Params, gain: f64, rng: &mut R) {
        let sd = gain * (2.0 / (self.inputs + self.outputs) as f64).sqrt();
        let w: Vec<f64> = if sd > 0.0 {
            let normal = Normal::new(0.0, sd).expect("positive sd");
            (0..self.inputs * self.outputs).map(|_| normal.sample(rng)).collect()
        } else {
            vec![0.0; self.inputs * self.outputs]
        };
        params.insert(
            self.weight_name(),
            Tensor::matrix(self.inputs, self.outputs, w).expect("dense shape"),
        );
        params.insert(self.bias_name(), Tensor::zeros(1, self.outputs));
    }

    pub fn forward(&self, graph: &mut Graph, params: &Params, x: NodeId) -> Result<NodeId> {
        let w = params.node(graph, &self.weight_name());
        let b = params.node(graph, &self.bias_name());
        let xw = graph.matmul(x, w)?;
        graph.add_row(xw, b)
    }
}

/// Stack of tanh layers followed by an optional linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Vec<Dense>,
    pub output: Option<Dense>,
}

impl Mlp {
    pub fn new(prefix: &str, inputs: usize, widths: &[usize], output: Option<usize>) -> Self {
        let mut hidden = Vec::with_capacity(widths.len());
        let mut fan_in = inputs;
        for (i, &w) in widths.iter().enumerate() {
            hidden.push(Dense::new(format!("{prefix}.hidden{i}"), fan_in, w));
            fan_in = w;
        }
        let output = output.map(|o| Dense::new(format!("{prefix}.out"), fan_in, o));
        Self { hidden, output }
    }

    pub fn output_dim(&self, inputs: usize) -> usize {
        self.output
            .as_ref()
            .map(|d| d.outputs)
            .or_else(|| self.hidden.last().map(|d| d.outputs))
            .unwrap_or(inputs)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut Params, output_gain: f64, rng: &mut R) {
        for layer in &self.hidden {
            layer.init(params, 1.0, rng);
        }
        if let Some(out) = &self.output {
            out.init(params, output_gain, rng);
        }
    }

    pub fn forward(&self, graph: &mut Graph, params: &Params, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for layer in &self.hidden {
            let pre = layer.forward(graph, params, h)?;
            h = graph.tanh(pre);
        }
        match &self.output {
            Some(out) => out.forward(graph, params, h),
            None => Ok(h),
        }
    }
}
