//! Define-by-run computation graph with reverse-mode gradients.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves are either
//! constants or named parameters; every op appends a node whose inputs are
//! already in the graph, so node order is a topological order and
//! [`Graph::backward`] is a single reverse sweep.

use std::collections::BTreeMap;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Op kinds understood by [`Graph::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    /// `m × n` plus a `1 × n` row broadcast over every row.
    AddRow,
    /// Column-wise concatenation of two tensors with equal row counts.
    Concat,
    /// Columns `start..end` of the input.
    Split {
        start: usize,
        end: usize,
    },
    Tanh,
    Softplus,
    Atan,
    Exp,
    Ln,
    Square,
    Neg,
    Scale(f64),
    /// Sum of all entries, `1 × 1`.
    Sum,
    /// Mean of all entries, `1 × 1`.
    Mean,
    /// Per-row sum, `m × 1`.
    SumCols,
    /// Mean over consecutive blocks of `group` rows, `(m / group) × n`.
    MeanGroups {
        group: usize,
    },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddRow => "broadcast-add-row",
            OpKind::Concat => "concat",
            OpKind::Split { .. } => "split",
            OpKind::Tanh => "tanh",
            OpKind::Softplus => "softplus",
            OpKind::Atan => "atan",
            OpKind::Exp => "exp",
            OpKind::Ln => "ln",
            OpKind::Square => "square",
            OpKind::Neg => "neg",
            OpKind::Scale(_) => "scale",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumCols => "sum-cols",
            OpKind::MeanGroups { .. } => "mean-groups",
        }
    }

    fn arity(&self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::AddRow | OpKind::Concat => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
enum Source {
    Constant,
    Param,
    Op(OpKind, Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    source: Source,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Leaf holding data that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Source::Constant, value.with_grad(false), false)
    }

    /// Leaf for a named trainable tensor. Registering the same name twice
    /// returns the existing node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push(Source::Param, value.clone().with_grad(true), true);
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn push(&mut self, source: Source, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            source,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Evaluates `kind` on `inputs` and records the result.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.len() != kind.arity() {
            return Err(Error::dim(
                kind.name(),
                format!("expects {} inputs, got {}", kind.arity(), inputs.len()),
            ));
        }
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::Contract(format!("node {} is not in this graph", bad.0)));
        }
        let value = self.eval(kind, inputs)?;
        let needs_grad = inputs.iter().any(|id| self.nodes[id.0].needs_grad);
        Ok(self.push(Source::Op(kind, inputs.to_vec()), value, needs_grad))
    }

    fn eval(&self, kind: OpKind, inputs: &[NodeId]) -> Result<Tensor> {
        let a = &self.nodes[inputs[0].0].value;
        let (m, n) = (a.rows(), a.cols());
        let map = |f: &dyn Fn(f64) -> f64| Tensor::from_parts(m, n, a.data().iter().map(|&x| f(x)).collect());
        let shape_err = |b: &Tensor| {
            Error::dim(
                kind.name(),
                format!("incompatible shapes {:?} and {:?}", a.shape(), b.shape()),
            )
        };
        Ok(match kind {
            OpKind::MatMul => {
                let b = &self.nodes[inputs[1].0].value;
                if n != b.rows() {
                    return Err(shape_err(b));
                }
                let p = b.cols();
                let mut out = vec![0.0; m * p];
                gemm(
                    m,
                    n,
                    p,
                    a.data(),
                    (n as isize, 1),
                    b.data(),
                    (p as isize, 1),
                    0.0,
                    &mut out,
                );
                Tensor::from_parts(m, p, out)
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let b = &self.nodes[inputs[1].0].value;
                if a.shape() != b.shape() {
                    return Err(shape_err(b));
                }
                let data = a.data().iter().zip(b.data());
                let data: Vec<f64> = match kind {
                    OpKind::Add => data.map(|(x, y)| x + y).collect(),
                    OpKind::Sub => data.map(|(x, y)| x - y).collect(),
                    _ => data.map(|(x, y)| x * y).collect(),
                };
                Tensor::from_parts(m, n, data)
            }
            OpKind::AddRow => {
                let b = &self.nodes[inputs[1].0].value;
                if b.rows() != 1 || b.cols() != n {
                    return Err(shape_err(b));
                }
                let mut data = a.data().to_vec();
                for row in data.chunks_exact_mut(n) {
                    for (x, y) in row.iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
                Tensor::from_parts(m, n, data)
            }
            OpKind::Concat => {
                let b = &self.nodes[inputs[1].0].value;
                if b.rows() != m {
                    return Err(shape_err(b));
                }
                let nb = b.cols();
                let mut data = Vec::with_capacity(m * (n + nb));
                for r in 0..m {
                    data.extend_from_slice(a.row_slice(r));
                    data.extend_from_slice(b.row_slice(r));
                }
                Tensor::from_parts(m, n + nb, data)
            }
            OpKind::Split { start, end } => {
                if start >= end || end > n {
                    return Err(Error::dim(
                        "split",
                        format!("column range {start}..{end} invalid for shape {:?}", a.shape()),
                    ));
                }
                let mut data = Vec::with_capacity(m * (end - start));
                for r in 0..m {
                    data.extend_from_slice(&a.row_slice(r)[start..end]);
                }
                Tensor::from_parts(m, end - start, data)
            }
            OpKind::Tanh => map(&f64::tanh),
            OpKind::Softplus => map(&softplus),
            OpKind::Atan => map(&f64::atan),
            OpKind::Exp => map(&f64::exp),
            OpKind::Ln => map(&f64::ln),
            OpKind::Square => map(&|x| x * x),
            OpKind::Neg => map(&|x| -x),
            OpKind::Scale(c) => map(&|x| c * x),
            OpKind::Sum => Tensor::scalar(a.data().iter().sum()),
            OpKind::Mean => Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64),
            OpKind::SumCols => Tensor::from_parts(m, 1, a.data().chunks_exact(n).map(|r| r.iter().sum()).collect()),
            OpKind::MeanGroups { group } => {
                if group == 0 || m % group != 0 {
                    return Err(Error::dim(
                        "mean-groups",
                        format!("{m} rows do not split into groups of {group}"),
                    ));
                }
                let groups = m / group;
                let mut data = vec![0.0; groups * n];
                for (g, out) in data.chunks_exact_mut(n).enumerate() {
                    for r in g * group..(g + 1) * group {
                        for (o, x) in out.iter_mut().zip(a.row_slice(r)) {
                            *o += x;
                        }
                    }
                    let inv = 1.0 / group as f64;
                    out.iter_mut().for_each(|o| *o *= inv);
                }
                Tensor::from_parts(groups, n, data)
            }
        })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.apply(OpKind::AddRow, &[a, row])
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Concat, &[a, b])
    }

    /// Splits columns at `at`, returning `(left, right)`.
    pub fn split(&mut self, a: NodeId, at: usize) -> Result<(NodeId, NodeId)> {
        let n = self.value(a).cols();
        let left = self.apply(OpKind::Split { start: 0, end: at }, &[a])?;
        let right = self.apply(OpKind::Split { start: at, end: n }, &[a])?;
        Ok((left, right))
    }

    pub fn columns(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.apply(OpKind::Split { start, end }, &[a])
    }

    pub fn unary(&mut self, kind: OpKind, a: NodeId) -> NodeId {
        debug_assert_eq!(kind.arity(), 1);
        self.apply(kind, &[a]).expect("unary op on a graph node")
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Tanh, a)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Softplus, a)
    }

    pub fn atan(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Atan, a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Exp, a)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Ln, a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Square, a)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Neg, a)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(OpKind::Scale(c), a)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Sum, a)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Mean, a)
    }

    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::SumCols, a)
    }

    pub fn mean_groups(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        self.apply(OpKind::MeanGroups { group }, &[a])
    }

    /// Gradient of the scalar `loss` with respect to every registered
    /// parameter. Parameters off the path to `loss` get zero tensors.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let adjoints = self.adjoints(loss)?;
        Ok(self
            .params
            .iter()
            .map(|(name, id)| {
                let v = &self.nodes[id.0].value;
                let g = adjoints[id.0].clone().unwrap_or_else(|| vec![0.0; v.len()]);
                (name.clone(), Tensor::new(v.shape().to_vec(), g).expect("grad shape"))
            })
            .collect())
    }

    fn adjoints(&self, loss: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        let lv = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract(format!("loss node {} is not in this graph", loss.0)))?;
        if lv.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.value.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Source::Op(kind, inputs) = &node.source {
                self.propagate(*kind, inputs, &node.value, &g, &mut adj);
            }
            adj[idx] = Some(g);
        }
        Ok(adj)
    }

    fn propagate(&self, kind: OpKind, inputs: &[NodeId], out: &Tensor, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let wants = |i: usize| self.nodes[inputs[i].0].needs_grad;
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let mut acc = |i: usize, contrib: Vec<f64>| {
            let slot = &mut adj[inputs[i].0];
            match slot {
                Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
                None => *slot = Some(contrib),
            }
        };
        let elementwise = |x: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            x.data().iter().zip(g).map(|(&x, &g)| f(x, g)).collect()
        };

        match kind {
            OpKind::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                if wants(0) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, (n as isize, 1), b.data(), (1, n as isize), 0.0, &mut da);
                    acc(0, da);
                }
                if wants(1) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), (1, k as isize), g, (n as isize, 1), 0.0, &mut db);
                    acc(1, db);
                }
            }
            OpKind::Add => {
                if wants(0) {
                    acc(0, g.to_vec());
                }
                if wants(1) {
                    acc(1, g.to_vec());
                }
            }
            OpKind::Sub => {
                if wants(0) {
                    acc(0, g.to_vec());
                }
                if wants(1) {
                    acc(1, g.iter().map(|x| -x).collect());
                }
            }
            OpKind::Mul => {
                if wants(0) {
                    acc(0, elementwise(val(1), &|y, g| y * g));
                }
                if wants(1) {
                    acc(1, elementwise(val(0), &|x, g| x * g));
                }
            }
            OpKind::AddRow => {
                if wants(0) {
                    acc(0, g.to_vec());
                }
                if wants(1) {
                    let n = val(1).cols();
                    let mut db = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                    acc(1, db);
                }
            }
            OpKind::Concat => {
                let (na, nb) = (val(0).cols(), val(1).cols());
                let rows = g.chunks_exact(na + nb);
                if wants(0) {
                    acc(0, rows.clone().flat_map(|r| r[..na].iter().copied()).collect());
                }
                if wants(1) {
                    acc(1, rows.flat_map(|r| r[na..].iter().copied()).collect());
                }
            }
            OpKind::Split { start, end } => {
                if wants(0) {
                    let n = val(0).cols();
                    let w = end - start;
                    let mut da = vec![0.0; val(0).len()];
                    for (dst, src) in da.chunks_exact_mut(n).zip(g.chunks_exact(w)) {
                        dst[start..end].copy_from_slice(src);
                    }
                    acc(0, da);
                }
            }
            OpKind::Tanh => {
                if wants(0) {
                    acc(0, elementwise(out, &|y, g| g * (1.0 - y * y)));
                }
            }
            OpKind::Softplus => {
                if wants(0) {
                    acc(0, elementwise(val(0), &|x, g| g * sigmoid(x)));
                }
            }
            OpKind::Atan => {
                if wants(0) {
                    acc(0, elementwise(val(0), &|x, g| g / (1.0 + x * x)));
                }
            }
            OpKind::Exp => {
                if wants(0) {
                    acc(0, elementwise(out, &|y, g| g * y));
                }
            }
            OpKind::Ln => {
                if wants(0) {
                    acc(0, elementwise(val(0), &|x, g| g / x));
                }
            }
            OpKind::Square => {
                if wants(0) {
                    acc(0, elementwise(val(0), &|x, g| 2.0 * x * g));
                }
            }
            OpKind::Neg => {
                if wants(0) {
                    acc(0, g.iter().map(|x| -x).collect());
                }
            }
            OpKind::Scale(c) => {
                if wants(0) {
                    acc(0, g.iter().map(|x| c * x).collect());
                }
            }
            OpKind::Sum => {
                if wants(0) {
                    acc(0, vec![g[0]; val(0).len()]);
                }
            }
            OpKind::Mean => {
                if wants(0) {
                    let len = val(0).len();
                    acc(0, vec![g[0] / len as f64; len]);
                }
            }
            OpKind::SumCols => {
                if wants(0) {
                    let n = val(0).cols();
                    acc(0, g.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect());
                }
            }
            OpKind::MeanGroups { group } => {
                if wants(0) {
                    let n = val(0).cols();
                    let inv = 1.0 / group as f64;
                    let mut da = Vec::with_capacity(val(0).len());
                    for grow in g.chunks_exact(n) {
                        for _ in 0..group {
                            da.extend(grow.iter().map(|x| x * inv));
                        }
                    }
                    acc(0, da);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_values() {
        let mut g = Graph::new();
        let eye = g.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap());
        let a = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[[5.0], [6.0]]).unwrap());
        let ib = g.matmul(eye, b).unwrap();
        assert_eq!(g.value(ib).data(), &[5.0, 6.0]);
        let ab = g.matmul(a, b).unwrap();
        assert_eq!(g.value(ab).data(), &[17.0, 39.0]);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        assert!(err.to_string().contains("[2, 3]"), "{err}");
        let r = g.constant(Tensor::zeros(1, 2));
        assert!(matches!(
            g.add_row(a, r),
            Err(Error::Dimension {
                op: "broadcast-add-row",
                ..
            })
        ));
        assert!(g.add(a, r).is_err());
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.softplus(x);
        assert!((g.value(y).item().unwrap() - 2f64.ln()).abs() < 1e-15);
        // no overflow at large |x|
        let big = g.constant(Tensor::row(&[800.0, -800.0]));
        let sb = g.softplus(big);
        assert_eq!(g.value(sb).data()[0], 800.0);
        assert!(g.value(sb).data()[1] >= 0.0);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let w = g.param("w", &Tensor::scalar(3.0));
        let sq = g.square(w);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["w"].data(), &[6.0]);
    }

    #[test]
    fn unreached_parameter_gets_zero_gradient() {
        let mut g = Graph::new();
        let w = g.param("w", &Tensor::scalar(2.0));
        let _u = g.param("unused", &Tensor::zeros(2, 2));
        let loss = g.square(w);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["unused"].data(), &[0.0; 4]);
        assert_eq!(grads["unused"].shape(), &[2, 2]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let w = g.param("w", &Tensor::zeros(1, 2));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn mean_groups_pools_blocks() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]).unwrap());
        let p = g.mean_groups(x, 2).unwrap();
        assert_eq!(g.value(p).data(), &[2.0, 3.0, 6.0, 7.0]);
        assert!(g.mean_groups(x, 3).is_err());
    }
}
