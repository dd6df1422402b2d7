use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{init_mlp, Activation, MlpParams};
use crate::error::{Error, Result};
use crate::fewshot::mix_seed;
use crate::heads::{GnnParams, GnnShape, DEFAULT_GNN_EDGE_HIDDEN, DEFAULT_GNN_HIDDEN, DEFAULT_GNN_ROUNDS};
use crate::linalg::Matrix;

pub const DEFAULT_RELATION_HIDDEN: usize = 16;

/// Layer widths of a [`Model`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub visual_dim: usize,
    /// Output widths of the trunk layers: relu hidden layers and a linear
    /// embedding layer.
    pub trunk: Vec<usize>,
    /// Leading trunk layers that stay fixed outside stage 2.
    pub frozen: usize,
    /// Class count the graph head is built for.
    pub way: usize,
    pub gnn_hidden: usize,
    pub gnn_edge_hidden: usize,
    pub gnn_rounds: usize,
    pub relation_hidden: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            visual_dim: 512,
            trunk: vec![128],
            frozen: 0,
            way: 5,
            gnn_hidden: DEFAULT_GNN_HIDDEN,
            gnn_edge_hidden: DEFAULT_GNN_EDGE_HIDDEN,
            gnn_rounds: DEFAULT_GNN_ROUNDS,
            relation_hidden: DEFAULT_RELATION_HIDDEN,
        }
    }
}

/// Visual trunk plus the episodic heads trained on top of it.
///
/// The trunk's first `frozen` layers form the fixed prefix; the remaining
/// `k = trunk.num_layers() - frozen` layers are the adaptable suffix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub trunk: MlpParams,
    pub frozen: usize,
    pub gnn: GnnParams,
    /// `2e -> hidden (relu) -> 1` on `[query, support]` embedding pairs.
    pub relation: MlpParams,
}

impl Model {
    pub fn new(shape: &ModelShape, seed: u64) -> Result<Self> {
        if shape.trunk.is_empty() {
            return Err(Error::InvalidArgument("trunk needs at least one layer".into()));
        }
        let mut dims = vec![shape.visual_dim];
        dims.extend(&shape.trunk);
        let mut acts = vec![Activation::Relu; shape.trunk.len() - 1];
        acts.push(Activation::Linear);
        let trunk = init_mlp(&dims, &acts, mix_seed(seed))?;
        let emb = trunk.out_dim();
        let gnn = GnnParams::new(
            &GnnShape {
                emb_dim: emb,
                way: shape.way,
                hidden: shape.gnn_hidden,
                edge_hidden: shape.gnn_edge_hidden,
                rounds: shape.gnn_rounds,
            },
            mix_seed(seed ^ 1),
        )?;
        let relation = init_mlp(
            &[2 * emb, shape.relation_hidden, 1],
            &[Activation::Relu, Activation::Linear],
            mix_seed(seed ^ 2),
        )?;
        Self::from_parts(trunk, shape.frozen, gnn, relation)
    }

    pub fn from_parts(trunk: MlpParams, frozen: usize, gnn: GnnParams, relation: MlpParams) -> Result<Self> {
        if frozen > trunk.num_layers() {
            return Err(Error::InvalidArgument(format!(
                "{frozen} frozen layers but the trunk has {}",
                trunk.num_layers()
            )));
        }
        let emb = trunk.out_dim();
        if gnn.emb_dim != emb || gnn.blocks.iter().sum::<usize>() != emb {
            return Err(Error::InvalidArgument(format!(
                "graph head expects {}-wide embeddings in blocks {:?}, trunk gives {emb}",
                gnn.emb_dim, gnn.blocks
            )));
        }
        if relation.in_dim() != 2 * emb || relation.out_dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "relation network maps {} -> {}, expected {} -> 1",
                relation.in_dim(),
                relation.out_dim(),
                2 * emb
            )));
        }
        Ok(Self {
            trunk,
            frozen,
            gnn,
            relation,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.trunk.out_dim()
    }

    pub fn way(&self) -> usize {
        self.gnn.way
    }

    /// Number of trainable trunk layers `k`.
    pub fn adaptable(&self) -> usize {
        self.trunk.num_layers() - self.frozen
    }

    /// `(frozen prefix, adaptable suffix)`.
    pub fn split_trunk(&self) -> (MlpParams, MlpParams) {
        self.trunk.split_at(self.frozen)
    }

    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.trunk.apply(x)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let m: Model = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_parts(m.trunk, m.frozen, m.gnn, m.relation)
    }
}
