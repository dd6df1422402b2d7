//! Feed-forward feature branches, their initialization and the parameter
//! update rules shared by every training stage.

mod mlp;
mod optim;

pub use mlp::{
    cross_entropy, glorot_bound, init_mlp, init_mlp_with, Activation, Layer, MlpNodes, MlpParams,
};
pub use optim::{OptimizerKind, OptimizerState, RMSPROP_DECAY, RMSPROP_EPSILON};
