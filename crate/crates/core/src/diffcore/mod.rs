//! Dense tensors, a define-by-run reverse-mode graph, and Adam.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, NodeId, OpKind};
pub use params::{Dense, Mlp, Params};
pub use tensor::Tensor;
