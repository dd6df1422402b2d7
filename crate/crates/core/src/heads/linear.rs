use serde::{Deserialize, Serialize};

use super::metric::{class_means, lexicographic};
use super::scores::{HeadScores, HeadTag};
use crate::autodiff::{Graph, NodeId};
use crate::encoders::OptimizerState;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Affine classifier `x W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    /// `dim x way`.
    pub weight: Matrix,
    /// `1 x way`.
    pub bias: Matrix,
}

impl LinearHead {
    pub fn zeros(dim: usize, way: usize) -> Self {
        Self {
            weight: Matrix::zeros(dim, way),
            bias: Matrix::zeros(1, way),
        }
    }

    /// `W_c = 2 mu_c`, `b_c = -|mu_c|^2`: the logits equal the prototypical
    /// ones up to a per-row constant, so argmax starts at nearest class mean.
    pub fn from_prototypes(emb: &Matrix, labels: &[usize], way: usize) -> Result<Self> {
        let protos = class_means(emb, labels, way)?;
        let weight = protos.transpose().scale(2.0);
        let bias = Matrix::from_fn(1, way, |_, c| -protos.row(c).iter().map(|v| v * v).sum::<f64>());
        Ok(Self { weight, bias })
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn way(&self) -> usize {
        self.weight.cols()
    }

    /// Appends `extra` zero-weight input rows.
    pub fn widen(&self, extra: usize) -> Self {
        Self {
            weight: Matrix::concat_rows(&[&self.weight, &Matrix::zeros(extra, self.way())]).expect("same width"),
            bias: self.bias.clone(),
        }
    }

    pub fn logits(&self, x: &Matrix) -> Result<HeadScores> {
        let mut z = x.matmul(&self.weight)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        HeadScores::new(z, HeadTag::Linear)
    }

    pub fn attach(&self, g: &mut Graph, trainable: bool) -> (NodeId, NodeId) {
        if trainable {
            (g.param(self.weight.clone()), g.param(self.bias.clone()))
        } else {
            (g.input(self.weight.clone()), g.input(self.bias.clone()))
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn linear_graph(g: &mut Graph, x: NodeId, head: (NodeId, NodeId)) -> NodeId {
    let z = g.matmul(x, head.0);
    g.add_bias(z, head.1)
}

/// Full-batch gradient descent on mean cross-entropy, starting from
/// [`LinearHead::from_prototypes`]. Rows are put in a canonical order first,
/// so the result does not depend on sample order.
pub fn linear_head_fit(emb: &Matrix, labels: &[usize], way: usize, epochs: usize, lr: f64) -> Result<LinearHead> {
    if emb.rows() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rows but {} labels",
            emb.rows(),
            labels.len()
        )));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].cmp(&labels[b]).then_with(|| lexicographic(emb.row(a), emb.row(b))));
    let x = emb.select_rows(&order);
    let y: Vec<usize> = order.iter().map(|&i| labels[i]).collect();

    let mut head = LinearHead::from_prototypes(&x, &y, way)?;
    let mut opt = OptimizerState::sgd(lr);
    for _ in 0..epochs {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let ids = head.attach(&mut g, true);
        let z = linear_graph(&mut g, xi, ids);
        let loss = g.softmax_cross_entropy(z, &y);
        g.forward()?;
        g.backward(loss)?;
        let grads = vec![g.grad_or_zeros(ids.0), g.grad_or_zeros(ids.1)];
        opt.step(&mut head.tensors_mut(), &grads)?;
    }
    Ok(head)
}

pub fn linear_head_logits(head: &LinearHead, query: &Matrix) -> Result<HeadScores> {
    head.logits(query)
}
