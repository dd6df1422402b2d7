use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `in x out`
    pub weight: Matrix,
    /// `1 x out`
    pub bias: Matrix,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Fully connected feed-forward network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Layer>", into = "Vec<Layer>")]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl TryFrom<Vec<Layer>> for MlpParams {
    type Error = Error;

    fn try_from(layers: Vec<Layer>) -> Result<Self> {
        MlpParams::from_layers(layers)
    }
}

impl From<MlpParams> for Vec<Layer> {
    fn from(p: MlpParams) -> Self {
        p.layers
    }
}

impl MlpParams {
    /// Validates that layer shapes chain and parameters are finite.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.out_dim()) {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: bias shape {:?} does not match output width {}",
                    l.bias.shape(),
                    l.out_dim()
                )));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::NonFinite("mlp parameters"));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: input width {} does not match previous output width {}",
                    l.in_dim(),
                    layers[i - 1].out_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    /// Splits into `(layers[..at], layers[at..])`.
    pub fn split_at(&self, at: usize) -> (MlpParams, MlpParams) {
        let at = at.min(self.layers.len());
        (
            MlpParams {
                layers: self.layers[..at].to_vec(),
            },
            MlpParams {
                layers: self.layers[at..].to_vec(),
            },
        )
    }

    /// Concatenates two networks whose widths chain.
    pub fn join(front: &MlpParams, back: &MlpParams) -> Result<MlpParams> {
        let mut layers = front.layers.clone();
        layers.extend(back.layers.iter().cloned());
        MlpParams::from_layers(layers)
    }

    /// Flat list of parameter tensors: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Plain forward pass without building a graph.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            if h.cols() != l.in_dim() {
                return Err(layer_shape_error(i, h.cols(), l.in_dim()));
            }
            let mut z = h.matmul(&l.weight)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(l.bias.data()) {
                    *v = l.activation.apply(*v + b);
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Inserts the parameters into `graph`, as trainable leaves when
    /// `trainable` and as constants otherwise.
    pub fn attach(&self, graph: &mut Graph, trainable: bool) -> MlpNodes {
        let ids = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (graph.param(l.weight.clone()), graph.param(l.bias.clone()))
                } else {
                    (graph.input(l.weight.clone()), graph.input(l.bias.clone()))
                }
            })
            .collect();
        MlpNodes {
            ids,
            activations: self.layers.iter().map(|l| l.activation).collect(),
            dims: self.layers.iter().map(|l| (l.in_dim(), l.out_dim())).collect(),
        }
    }

    /// Handles over existing graph nodes `ids` (in [`Self::tensors`] order)
    /// that hold this network's parameters.
    pub fn bind(&self, ids: &[NodeId]) -> Result<MlpNodes> {
        if ids.len() != 2 * self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} node ids for {} parameter tensors",
                ids.len(),
                2 * self.layers.len()
            )));
        }
        Ok(MlpNodes {
            ids: ids.chunks(2).map(|c| (c[0], c[1])).collect(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            dims: self.layers.iter().map(|l| (l.in_dim(), l.out_dim())).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn layer_shape_error(layer: usize, got: usize, want: usize) -> Error {
    Error::InvalidArgument(format!(
        "layer {layer}: input has {got} columns, layer expects {want}"
    ))
}

/// Graph handles for an attached [`MlpParams`].
#[derive(Clone, Debug)]
pub struct MlpNodes {
    ids: Vec<(NodeId, NodeId)>,
    activations: Vec<Activation>,
    dims: Vec<(usize, usize)>,
}

impl MlpNodes {
    /// Records `x -> layer_0 -> ... -> layer_n` and returns the output node.
    /// Fails early when the input width does not match the first layer.
    pub fn forward(&self, graph: &mut Graph, x: NodeId, x_cols: usize) -> Result<NodeId> {
        if let Some(&(want, _)) = self.dims.first() {
            if x_cols != want {
                return Err(layer_shape_error(0, x_cols, want));
            }
        }
        let mut h = x;
        for (&(w, b), act) in self.ids.iter().zip(&self.activations) {
            h = graph.matmul(h, w);
            h = graph.add_bias(h, b);
            h = match act {
                Activation::Tanh => graph.tanh(h),
                Activation::Relu => graph.relu(h),
                Activation::Linear => h,
            };
        }
        Ok(h)
    }

    pub fn in_dim(&self) -> usize {
        self.dims.first().map_or(0, |d| d.0)
    }

    pub fn out_dim(&self) -> usize {
        self.dims.last().map_or(0, |d| d.1)
    }

    /// Node ids in [`MlpParams::tensors`] order.
    pub fn param_ids(&self) -> Vec<NodeId> {
        self.ids.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Gradients in [`MlpParams::tensors`] order (zeros where unused).
    pub fn grads(&self, graph: &Graph) -> Vec<Matrix> {
        self.param_ids().into_iter().map(|id| graph.grad_or_zeros(id)).collect()
    }
}

/// Glorot-uniform weights `U(-a, a)`, `a = sqrt(6 / (in + out))`, zero biases.
pub fn init_mlp(dims: &[usize], activations: &[Activation], seed: u64) -> Result<MlpParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_mlp_with(dims, activations, &mut rng)
}

pub fn init_mlp_with<R: Rng + ?Sized>(
    dims: &[usize],
    activations: &[Activation],
    rng: &mut R,
) -> Result<MlpParams> {
    if dims.len() < 2 || activations.len() != dims.len() - 1 {
        return Err(Error::InvalidArgument(format!(
            "{} layer widths need {} activations, got {}",
            dims.len(),
            dims.len().saturating_sub(1),
            activations.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument("layer widths must be at least 1".into()));
    }
    let layers = dims
        .windows(2)
        .zip(activations)
        .map(|(w, &activation)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = glorot_bound(fan_in, fan_out);
            Layer {
                weight: Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound)),
                bias: Matrix::zeros(1, fan_out),
                activation,
            }
        })
        .collect();
    MlpParams::from_layers(layers)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Mean softmax cross-entropy node for `logits` (N x C).
pub fn cross_entropy(graph: &mut Graph, logits: NodeId, labels: &[usize]) -> NodeId {
    graph.softmax_cross_entropy(logits, labels)
}
