//! Graph-metric head: label propagation over one fully connected graph whose
//! nodes are the support and query items of an episode.
//!
//! Node features start as `[embedding, label]`, where support nodes carry a
//! one-hot label and query nodes the uniform vector `1/C`. The embedding is
//! split into column blocks (one per feature source) and every block is
//! scaled to unit norm per node, which keeps edge scores on the same scale
//! whatever the trunk's output magnitude. Each round builds
//! an adjacency from a small edge network applied to `|x_i - x_j|`, normalizes
//! it with a row softmax, and updates `x <- relu(W [x, A x] + b)`. A final
//! linear layer maps query nodes to class logits.

use serde::{Deserialize, Serialize};

use super::metric::infer_way;
use super::scores::{HeadScores, HeadTag};
use crate::autodiff::{Graph, NodeId};
use crate::encoders::{init_mlp_with, Activation, MlpNodes, MlpParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_GNN_HIDDEN: usize = 32;
pub const DEFAULT_GNN_EDGE_HIDDEN: usize = 16;
pub const DEFAULT_GNN_ROUNDS: usize = 2;

// Initialization: the head starts as soft label propagation. Edge networks
// score `-sharpness * mean_k relu(|W_k| |x_i - x_j|)`, a decreasing function
// of distance; label slots (own and aggregated) pass to the first `way`
// hidden units and on to the logits with this gain; all other weights are
// Glorot draws shrunk by the random scale. A plain Glorot start sits at a
// symmetric saddle (uniform attention carries no label signal) that episodic
// training does not leave in a few hundred episodes.
const INIT_EDGE_SHARPNESS: f64 = 10.0;
const INIT_LABEL_GAIN: f64 = 2.0;
const INIT_RANDOM_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnShape {
    pub emb_dim: usize,
    pub way: usize,
    pub hidden: usize,
    pub edge_hidden: usize,
    pub rounds: usize,
}

impl GnnShape {
    pub fn new(emb_dim: usize, way: usize) -> Self {
        Self {
            emb_dim,
            way,
            hidden: DEFAULT_GNN_HIDDEN,
            edge_hidden: DEFAULT_GNN_EDGE_HIDDEN,
            rounds: DEFAULT_GNN_ROUNDS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub emb_dim: usize,
    pub way: usize,
    /// Widths of the separately normalized embedding blocks; sums to `emb_dim`.
    pub blocks: Vec<usize>,
    /// Per round: `F -> edge_hidden (relu) -> 1`.
    pub edge: Vec<MlpParams>,
    /// Per round: `2F -> hidden (relu)`.
    pub node: Vec<MlpParams>,
    /// `hidden -> way`.
    pub out: MlpParams,
}

impl GnnParams {
    pub fn new(shape: &GnnShape, seed: u64) -> Result<Self> {
        if shape.rounds == 0 || shape.way == 0 {
            return Err(Error::InvalidArgument("graph head needs at least one round and one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edge = Vec::with_capacity(shape.rounds);
        let mut node = Vec::with_capacity(shape.rounds);
        let mut width = shape.emb_dim + shape.way;
        let route = shape.hidden >= shape.way;
        for r in 0..shape.rounds {
            let mut e = init_mlp_with(
                &[width, shape.edge_hidden, 1],
                &[Activation::Relu, Activation::Linear],
                &mut rng,
            )?;
            {
                let l = e.layers_mut();
                l[0].weight = l[0].weight.map(f64::abs);
                l[1].weight = Matrix::filled(shape.edge_hidden, 1, -INIT_EDGE_SHARPNESS / shape.edge_hidden as f64);
            }
            edge.push(e);
            let mut n = init_mlp_with(&[2 * width, shape.hidden], &[Activation::Relu], &mut rng)?;
            let label_at = if r == 0 { shape.emb_dim } else { 0 };
            let w = &mut n.layers_mut()[0].weight;
            *w = w.scale(INIT_RANDOM_SCALE);
            if route {
                for c in 0..shape.way {
                    w[(label_at + c, c)] += INIT_LABEL_GAIN;
                    w[(width + label_at + c, c)] += INIT_LABEL_GAIN;
                }
            }
            node.push(n);
            width = shape.hidden;
        }
        let mut out = init_mlp_with(&[width, shape.way], &[Activation::Linear], &mut rng)?;
        {
            let w = &mut out.layers_mut()[0].weight;
            *w = w.scale(INIT_RANDOM_SCALE);
            if route {
                for c in 0..shape.way {
                    w[(c, c)] += INIT_LABEL_GAIN;
                }
            }
        }
        Self::from_parts(shape.emb_dim, shape.way, edge, node, out)
    }

    pub fn from_parts(
        emb_dim: usize,
        way: usize,
        edge: Vec<MlpParams>,
        node: Vec<MlpParams>,
        out: MlpParams,
    ) -> Result<Self> {
        if edge.is_empty() || edge.len() != node.len() {
            return Err(Error::InvalidArgument(format!(
                "{} edge networks for {} node updates",
                edge.len(),
                node.len()
            )));
        }
        let mut width = emb_dim + way;
        for (r, (e, n)) in edge.iter().zip(&node).enumerate() {
            if e.in_dim() != width || e.out_dim() != 1 || n.in_dim() != 2 * width {
                return Err(Error::InvalidArgument(format!(
                    "round {r}: edge {} -> {}, node input {}; features are {width} wide",
                    e.in_dim(),
                    e.out_dim(),
                    n.in_dim()
                )));
            }
            width = n.out_dim();
        }
        if out.in_dim() != width || out.out_dim() != way {
            return Err(Error::InvalidArgument(format!(
                "output layer {} -> {}, expected {width} -> {way}",
                out.in_dim(),
                out.out_dim()
            )));
        }
        Ok(Self {
            emb_dim,
            way,
            blocks: vec![emb_dim],
            edge,
            node,
            out,
        })
    }

    pub fn rounds(&self) -> usize {
        self.edge.len()
    }

    /// Accepts embeddings with `extra` more trailing columns. The new inputs
    /// get zero weights, so scores on the original columns are unchanged.
    pub fn widen_embedding(&self, extra: usize) -> Result<Self> {
        let mut out = self.clone();
        let f0 = self.emb_dim + self.way;
        let e0 = &mut out.edge[0].layers_mut()[0].weight;
        *e0 = insert_zero_rows(e0, self.emb_dim, extra);
        let n0 = &mut out.node[0].layers_mut()[0].weight;
        *n0 = insert_zero_rows(n0, f0 + self.emb_dim, extra);
        *n0 = insert_zero_rows(n0, self.emb_dim, extra);
        out.emb_dim += extra;
        if extra > 0 {
            out.blocks.push(extra);
        }
        Ok(out)
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut t = Vec::new();
        for (e, n) in self.edge.iter().zip(&self.node) {
            t.extend(e.tensors());
            t.extend(n.tensors());
        }
        t.extend(self.out.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = Vec::new();
        for (e, n) in self.edge.iter_mut().zip(self.node.iter_mut()) {
            t.extend(e.tensors_mut());
            t.extend(n.tensors_mut());
        }
        t.extend(self.out.tensors_mut());
        t
    }

    /// Handles over existing nodes `ids` in [`Self::tensors`] order.
    pub fn bind(&self, ids: &[NodeId]) -> Result<GnnNodes> {
        let total = self.tensors().len();
        if ids.len() != total {
            return Err(Error::InvalidArgument(format!("{} node ids for {total} tensors", ids.len())));
        }
        let mut k = 0;
        let mut take = |m: &MlpParams| {
            let n = 2 * m.num_layers();
            let nodes = m.bind(&ids[k..k + n]);
            k += n;
            nodes
        };
        let mut edge = Vec::with_capacity(self.edge.len());
        let mut node = Vec::with_capacity(self.node.len());
        for (e, n) in self.edge.iter().zip(&self.node) {
            edge.push(take(e)?);
            node.push(take(n)?);
        }
        let out = take(&self.out)?;
        Ok(GnnNodes {
            emb_dim: self.emb_dim,
            way: self.way,
            blocks: self.blocks.clone(),
            edge,
            node,
            out,
        })
    }

    pub fn attach(&self, g: &mut Graph, trainable: bool) -> GnnNodes {
        GnnNodes {
            emb_dim: self.emb_dim,
            way: self.way,
            blocks: self.blocks.clone(),
            edge: self.edge.iter().map(|e| e.attach(g, trainable)).collect(),
            node: self.node.iter().map(|n| n.attach(g, trainable)).collect(),
            out: self.out.attach(g, trainable),
        }
    }
}

fn insert_zero_rows(m: &Matrix, at: usize, count: usize) -> Matrix {
    Matrix::from_fn(m.rows() + count, m.cols(), |i, j| {
        if i < at {
            m[(i, j)]
        } else if i < at + count {
            0.0
        } else {
            m[(i - count, j)]
        }
    })
}

/// Graph handles of an attached [`GnnParams`].
#[derive(Clone, Debug)]
pub struct GnnNodes {
    emb_dim: usize,
    way: usize,
    blocks: Vec<usize>,
    edge: Vec<MlpNodes>,
    node: Vec<MlpNodes>,
    out: MlpNodes,
}

/// Output of [`gnn_graph`].
#[derive(Clone, Debug)]
pub struct GnnOutput {
    /// Query logits, `n_query x way`.
    pub logits: NodeId,
    /// Row-softmax adjacency of each round, `N x N`.
    pub adjacency: Vec<NodeId>,
}

impl GnnNodes {
    /// Parameter node ids in [`GnnParams::tensors`] order.
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = Vec::new();
        for (e, n) in self.edge.iter().zip(&self.node) {
            ids.extend(e.param_ids());
            ids.extend(n.param_ids());
        }
        ids.extend(self.out.param_ids());
        ids
    }

    pub fn grads(&self, g: &Graph) -> Vec<Matrix> {
        self.param_ids().into_iter().map(|id| g.grad_or_zeros(id)).collect()
    }
}

/// Label features: one-hot rows for the support, `1/way` rows for queries.
pub fn label_features(support_labels: &[usize], n_query: usize, way: usize) -> Matrix {
    let s = support_labels.len();
    Matrix::from_fn(s + n_query, way, |i, c| {
        if i < s {
            if support_labels[i] == c {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 / way as f64
        }
    })
}

/// Records the head on `emb_all`, whose first rows are the support
/// embeddings followed by `n_query` query embeddings.
pub fn gnn_graph(
    g: &mut Graph,
    emb_all: NodeId,
    emb_cols: usize,
    support_labels: &[usize],
    n_query: usize,
    nodes: &GnnNodes,
) -> Result<GnnOutput> {
    if emb_cols != nodes.emb_dim {
        return Err(Error::InvalidArgument(format!(
            "graph head expects {}-wide embeddings, got {emb_cols}",
            nodes.emb_dim
        )));
    }
    if let Some(&bad) = support_labels.iter().find(|&&l| l >= nodes.way) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{}", nodes.way)));
    }
    let s = support_labels.len();
    let n = s + n_query;
    if nodes.blocks.iter().sum::<usize>() != emb_cols {
        return Err(Error::InvalidArgument(format!(
            "embedding blocks {:?} do not cover {emb_cols} columns",
            nodes.blocks
        )));
    }
    let labels = g.input(label_features(support_labels, n_query, nodes.way));
    let mut parts = Vec::with_capacity(nodes.blocks.len() + 1);
    if nodes.blocks.len() == 1 {
        parts.push(g.row_normalize(emb_all));
    } else {
        let mut start = 0;
        for &w in &nodes.blocks {
            let pick = g.input(Matrix::from_fn(emb_cols, w, |i, j| if i == start + j { 1.0 } else { 0.0 }));
            let block = g.matmul(emb_all, pick);
            parts.push(g.row_normalize(block));
            start += w;
        }
    }
    parts.push(labels);
    let mut x = g.concat_cols(&parts);
    let mut width = nodes.emb_dim + nodes.way;
    let mut adjacency = Vec::with_capacity(nodes.edge.len());
    for (edge, update) in nodes.edge.iter().zip(&nodes.node) {
        let diffs = g.pairwise_abs_diff(x);
        let e = edge.forward(g, diffs, width)?;
        let e = g.reshape(e, n, n);
        let a = g.row_softmax(e);
        adjacency.push(a);
        let agg = g.matmul(a, x);
        let cat = g.concat_cols(&[x, agg]);
        x = update.forward(g, cat, 2 * width)?;
        width = update.out_dim();
    }
    let logits_all = nodes.out.forward(g, x, width)?;
    let query_rows: Vec<usize> = (s..n).collect();
    let logits = g.gather_rows(logits_all, &query_rows);
    Ok(GnnOutput { logits, adjacency })
}

/// Scores `query` with the graph head; also returns each round's adjacency.
pub fn graph_metric_scores_with_adjacency(
    support: &Matrix,
    labels: &[usize],
    query: &Matrix,
    params: &GnnParams,
) -> Result<(HeadScores, Vec<Matrix>)> {
    if support.cols() != query.cols() {
        return Err(Error::Shape {
            op: "graph_metric_scores",
            left: support.shape(),
            right: query.shape(),
        });
    }
    if support.rows() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} support rows but {} labels",
            support.rows(),
            labels.len()
        )));
    }
    infer_way(labels)?;
    let mut g = Graph::new();
    let emb = g.input(Matrix::concat_rows(&[support, query])?);
    let nodes = params.attach(&mut g, false);
    let out = gnn_graph(&mut g, emb, support.cols(), labels, query.rows(), &nodes)?;
    g.forward()?;
    let adjacency = out.adjacency.iter().map(|&a| g.value(a).clone()).collect();
    Ok((HeadScores::new(g.value(out.logits).clone(), HeadTag::GraphMetric)?, adjacency))
}

pub fn graph_metric_scores(support: &Matrix, labels: &[usize], query: &Matrix, params: &GnnParams) -> Result<HeadScores> {
    Ok(graph_metric_scores_with_adjacency(support, labels, query, params)?.0)
}
