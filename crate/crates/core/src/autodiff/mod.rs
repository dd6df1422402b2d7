//! Tape-style reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Graph`] is an append-only list of nodes; insertion order is a
//! topological order. Builder methods only record operations. [`Graph::forward`]
//! evaluates every pending node (reporting shape errors with the node index)
//! and [`Graph::backward`] fills in gradients of a scalar loss.

mod check;
mod ops;

use std::sync::Arc;

pub use check::{gradcheck, GradcheckReport, ParamCheck};
pub(crate) use ops::row_softmax;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kind of a node, without its operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpTag {
    Input,
    Param,
    MatMul,
    MatMulT,
    AddBias,
    Add,
    Scale,
    Tanh,
    Relu,
    SoftmaxCrossEntropy,
    NegSqDistance,
    RowNormalize,
    RowSoftmax,
    ConcatCols,
    GatherRows,
    PairwiseAbsDiff,
    Reshape,
    Sum,
    CustomGrad,
}

/// A node whose forward value and gradient are supplied by the caller.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Matrix]) -> Result<Matrix>;

    /// Gradients with respect to each input, given the upstream gradient of
    /// the output.
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>>;
}

#[derive(Clone)]
pub(crate) enum Op {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Relu(NodeId),
    SoftmaxCrossEntropy(NodeId, Arc<[usize]>),
    NegSqDistance(NodeId, NodeId),
    RowNormalize(NodeId),
    RowSoftmax(NodeId),
    ConcatCols(Vec<NodeId>),
    GatherRows(NodeId, Arc<[usize]>),
    PairwiseAbsDiff(NodeId),
    Reshape(NodeId, usize, usize),
    Sum(NodeId),
    Custom(Vec<NodeId>, Arc<dyn CustomOp>),
}

impl Op {
    fn tag(&self) -> OpTag {
        match self {
            Op::Input => OpTag::Input,
            Op::Param => OpTag::Param,
            Op::MatMul(..) => OpTag::MatMul,
            Op::MatMulT(..) => OpTag::MatMulT,
            Op::AddBias(..) => OpTag::AddBias,
            Op::Add(..) => OpTag::Add,
            Op::Scale(..) => OpTag::Scale,
            Op::Tanh(_) => OpTag::Tanh,
            Op::Relu(_) => OpTag::Relu,
            Op::SoftmaxCrossEntropy(..) => OpTag::SoftmaxCrossEntropy,
            Op::NegSqDistance(..) => OpTag::NegSqDistance,
            Op::RowNormalize(_) => OpTag::RowNormalize,
            Op::RowSoftmax(_) => OpTag::RowSoftmax,
            Op::ConcatCols(_) => OpTag::ConcatCols,
            Op::GatherRows(..) => OpTag::GatherRows,
            Op::PairwiseAbsDiff(_) => OpTag::PairwiseAbsDiff,
            Op::Reshape(..) => OpTag::Reshape,
            Op::Sum(_) => OpTag::Sum,
            Op::Custom(..) => OpTag::CustomGrad,
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param => vec![],
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::NegSqDistance(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::SoftmaxCrossEntropy(a, _)
            | Op::RowNormalize(a)
            | Op::RowSoftmax(a)
            | Op::GatherRows(a, _)
            | Op::PairwiseAbsDiff(a)
            | Op::Reshape(a, ..)
            | Op::Sum(a) => vec![*a],
            Op::ConcatCols(ps) | Op::Custom(ps, _) => ps.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Option<Matrix>,
    grad: Option<Matrix>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    evaluated: usize,
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

    fn push(&mut self, op: Op, value: Option<Matrix>) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, Some(value))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Param, Some(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b), None)
    }

    /// `a * b'`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMulT(a, b), None)
    }

    /// Adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddBias(a, bias), None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), None)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::Scale(a, s), None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a), None)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a), None)
    }

    /// Mean softmax cross-entropy of `logits` (N x C) against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy(logits, labels.into()), None)
    }

    /// `out[i][j] = -||a_i - b_j||^2` over rows.
    pub fn neg_sq_distance(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::NegSqDistance(a, b), None)
    }

    /// Scales every row to unit Euclidean norm.
    pub fn row_normalize(&mut self, a: NodeId) -> NodeId {
        self.push(Op::RowNormalize(a), None)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::RowSoftmax(a), None)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::ConcatCols(parts.to_vec()), None)
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> NodeId {
        self.push(Op::GatherRows(a, rows.into()), None)
    }

    /// For `a` with N rows, the N^2 rows `|a_i - a_j|` in order `i * N + j`.
    pub fn pairwise_abs_diff(&mut self, a: NodeId) -> NodeId {
        self.push(Op::PairwiseAbsDiff(a), None)
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Reshape(a, rows, cols), None)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), None)
    }

    pub fn custom(&mut self, inputs: &[NodeId], op: Arc<dyn CustomOp>) -> NodeId {
        self.push(Op::Custom(inputs.to_vec(), op), None)
    }

    pub fn tag(&self, id: NodeId) -> OpTag {
        self.nodes[id.0].op.tag()
    }

    pub fn op_tags(&self) -> Vec<OpTag> {
        self.nodes.iter().map(|n| n.op.tag()).collect()
    }

    pub fn is_evaluated(&self, id: NodeId) -> bool {
        self.nodes[id.0].value.is_some()
    }

    /// Value of an evaluated node.
    ///
    /// # Panics
    /// If the node has not been evaluated by [`Graph::forward`].
    pub fn value(&self, id: NodeId) -> &Matrix {
        self.nodes[id.0]
            .value
            .as_ref()
            .unwrap_or_else(|| panic!("node {} read before forward", id.0))
    }

    /// Replaces a leaf value and invalidates everything computed after it.
    pub fn set_leaf(&mut self, id: NodeId, value: Matrix) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Input | Op::Param) {
            return Err(Error::Graph {
                node: id.0,
                msg: "only leaves can be assigned".into(),
            });
        }
        node.value = Some(value);
        for n in self.nodes.iter_mut() {
            n.grad = None;
            if !matches!(n.op, Op::Input | Op::Param) {
                n.value = None;
            }
        }
        self.evaluated = 0;
        Ok(())
    }

    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Evaluates all nodes added since the last call.
    pub fn forward(&mut self) -> Result<()> {
        for idx in self.evaluated..self.nodes.len() {
            if self.nodes[idx].value.is_none() {
                let value = {
                    let op = &self.nodes[idx].op;
                    let parent_vals: Vec<&Matrix> = op
                        .parents()
                        .iter()
                        .map(|p| self.nodes[p.0].value.as_ref().expect("parents precede children"))
                        .collect();
                    ops::forward(op, &parent_vals).map_err(|e| with_node(e, idx))?
                };
                if !value.is_finite() {
                    return Err(Error::Graph {
                        node: idx,
                        msg: format!("{:?} produced a non-finite value", self.nodes[idx].op.tag()),
                    });
                }
                self.nodes[idx].value = Some(value);
            }
        }
        self.evaluated = self.nodes.len();
        Ok(())
    }

    /// Convenience: evaluate and return the scalar value of `loss`.
    pub fn forward_scalar(&mut self, loss: NodeId) -> Result<f64> {
        self.forward()?;
        scalar_of(self.value(loss), loss.0)
    }

    /// Back-propagates from the scalar node `loss`, overwriting any previous
    /// gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss.0 >= self.evaluated || self.nodes[loss.0].value.is_none() {
            return Err(Error::Graph {
                node: loss.0,
                msg: "backward called before forward".into(),
            });
        }
        scalar_of(self.value(loss), loss.0)?;
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            let parents = op.parents();
            if !parents.is_empty() {
                let parent_grads = {
                    let parent_vals: Vec<&Matrix> = parents
                        .iter()
                        .map(|p| self.nodes[p.0].value.as_ref().expect("evaluated"))
                        .collect();
                    let out = self.nodes[idx].value.as_ref().expect("evaluated");
                    ops::backward(&op, &parent_vals, out, &upstream).map_err(|e| with_node(e, idx))?
                };
                for (p, g) in parents.iter().zip(parent_grads) {
                    match &mut self.nodes[p.0].grad {
                        Some(acc) => acc.add_assign(&g).map_err(|e| with_node(e, idx))?,
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            self.nodes[idx].grad = Some(upstream);
        }
        Ok(())
    }

    /// Gradient of a node, or zeros of its shape if the loss does not
    /// depend on it.
    pub fn grad_or_zeros(&self, id: NodeId) -> Matrix {
        match self.grad(id) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.value(id).shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

fn scalar_of(m: &Matrix, node: usize) -> Result<f64> {
    if m.shape() != (1, 1) {
        return Err(Error::Graph {
            node,
            msg: format!("loss must be 1x1, got {:?}", m.shape()),
        });
    }
    Ok(m[(0, 0)])
}

fn with_node(e: Error, node: usize) -> Error {
    match e {
        Error::Graph { .. } => e,
        Error::Shape { op, left, right } => Error::Graph {
            node,
            msg: format!("{op}: shape mismatch {left:?} vs {right:?}"),
        },
        other => Error::Graph {
            node,
            msg: other.to_string(),
        },
    }
}
