use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Rmsprop,
    Sgd,
}

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPSILON: f64 = 1e-8;

/// Parameter update rule plus its per-tensor state.
///
/// RMSprop: `acc <- decay * acc + (1 - decay) * g^2`,
/// `p <- p - lr * g / (sqrt(acc) + eps)`. SGD: `p <- p - lr * g`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub decay: f64,
    pub epsilon: f64,
    accumulators: Vec<Matrix>,
}

impl OptimizerState {
    pub fn rmsprop(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Rmsprop,
            lr,
            decay: RMSPROP_DECAY,
            epsilon: RMSPROP_EPSILON,
            accumulators: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            decay: 0.0,
            epsilon: 0.0,
            accumulators: Vec::new(),
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Rmsprop => Self::rmsprop(lr),
            OptimizerKind::Sgd => Self::sgd(lr),
        }
    }

    pub fn accumulators(&self) -> &[Matrix] {
        &self.accumulators
    }

    /// Applies one update in place. Accumulators are created lazily on the
    /// first call and must keep matching the parameter shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *v -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Rmsprop => {
                if self.accumulators.is_empty() {
                    self.accumulators = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
                }
                if self.accumulators.len() != grads.len()
                    || self.accumulators.iter().zip(grads).any(|(a, g)| a.shape() != g.shape())
                {
                    return Err(Error::InvalidArgument(
                        "parameter shapes changed between optimizer steps".into(),
                    ));
                }
                let (decay, lr, eps) = (self.decay, self.lr, self.epsilon);
                for ((p, g), acc) in params.iter_mut().zip(grads).zip(self.accumulators.iter_mut()) {
                    for ((v, d), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
                        *a = decay * *a + (1.0 - decay) * d * d;
                        *v -= lr * d / (a.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
