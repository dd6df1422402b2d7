use serde::{Deserialize, Serialize};

use super::objective::NegCorrelationLoss;
use crate::autodiff::Graph;
use crate::encoders::{init_mlp, Activation, MlpParams, OptimizerState};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_R1: f64 = 1e-4;
pub const DEFAULT_DCCA_STEPS: usize = 20;
pub const DEFAULT_DCCA_LR: f64 = 0.001;

/// Paired projection networks mapping the visual and textual views into a
/// shared `d`-dimensional space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DccaBlock {
    pub visual: MlpParams,
    pub text: MlpParams,
    pub r1: f64,
    pub top_k: usize,
}

/// Layer widths for a [`DccaBlock`]: both branches use tanh hidden layers and
/// a linear output layer of width `output_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct DccaShape {
    pub visual_in: usize,
    pub text_in: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl DccaShape {
    /// 512 -> 1024 -> 1024 -> 20 for the visual branch and
    /// 768 -> 1024 -> 1024 -> 20 for the text branch.
    pub fn reference() -> Self {
        Self {
            visual_in: 512,
            text_in: 768,
            hidden: vec![1024, 1024],
            output_dim: 20,
        }
    }
}

impl DccaBlock {
    pub fn new(shape: &DccaShape, r1: f64, top_k: Option<usize>, seed: u64) -> Result<Self> {
        let branch = |input: usize, seed: u64| {
            let mut dims = vec![input];
            dims.extend(&shape.hidden);
            dims.push(shape.output_dim);
            let mut acts = vec![Activation::Tanh; shape.hidden.len()];
            acts.push(Activation::Linear);
            init_mlp(&dims, &acts, seed)
        };
        let visual = branch(shape.visual_in, seed)?;
        let text = branch(shape.text_in, seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?;
        Self::from_parts(visual, text, r1, top_k.unwrap_or(shape.output_dim))
    }

    pub fn from_parts(visual: MlpParams, text: MlpParams, r1: f64, top_k: usize) -> Result<Self> {
        if visual.out_dim() != text.out_dim() {
            return Err(Error::InvalidArgument(format!(
                "branch output widths differ: {} vs {}",
                visual.out_dim(),
                text.out_dim()
            )));
        }
        if !(r1 > 0.0 && r1.is_finite()) {
            return Err(Error::InvalidArgument(format!("r1 = {r1} must be positive")));
        }
        if top_k == 0 || top_k > visual.out_dim() {
            return Err(Error::InvalidArgument(format!(
                "top_k = {top_k} must be in 1..={}",
                visual.out_dim()
            )));
        }
        Ok(Self {
            visual,
            text,
            r1,
            top_k,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.visual.out_dim()
    }

    /// Correlation of the current projections of `v` and `t`.
    pub fn correlation(&self, v: &Matrix, t: &Matrix) -> Result<f64> {
        let z1 = self.visual.apply(v)?;
        let z2 = self.text.apply(t)?;
        Ok(super::correlation_objective(&z1, &z2, self.r1, self.top_k)?.0)
    }

    pub fn project_text(&self, t: &Matrix) -> Result<Matrix> {
        self.text.apply(t)
    }

    pub fn project_visual(&self, v: &Matrix) -> Result<Matrix> {
        self.visual.apply(v)
    }
}

/// Result of [`train_dcca`].
#[derive(Clone, Debug)]
pub struct DccaTrace {
    pub block: DccaBlock,
    /// Correlation before the first update and after every update
    /// (`steps + 1` entries).
    pub correlations: Vec<f64>,
}

/// Full-batch RMSprop on `-corr(g(V), h(T))`, updating both branches jointly.
pub fn train_dcca(block: &DccaBlock, v: &Matrix, t: &Matrix, steps: usize, lr: f64) -> Result<DccaTrace> {
    if v.rows() != t.rows() {
        return Err(Error::Shape {
            op: "train_dcca",
            left: v.shape(),
            right: t.shape(),
        });
    }
    if v.rows() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: v.rows(),
        });
    }
    let mut block = block.clone();
    let mut opt = OptimizerState::rmsprop(lr);
    let mut correlations = Vec::with_capacity(steps + 1);
    let loss_op = NegCorrelationLoss::new(block.r1, block.top_k);

    for step in 0..=steps {
        let mut g = Graph::new();
        let gv = block.visual.attach(&mut g, true);
        let gt = block.text.attach(&mut g, true);
        let vi = g.input(v.clone());
        let ti = g.input(t.clone());
        let z1 = gv.forward(&mut g, vi, v.cols())?;
        let z2 = gt.forward(&mut g, ti, t.cols())?;
        let loss = g.custom(&[z1, z2], loss_op.clone());
        let value = match g.forward_scalar(loss) {
            Ok(v) => v,
            Err(Error::Graph { msg, .. }) if msg.contains("non-finite") => {
                return Err(Error::Diverged { step })
            }
            Err(e) => return Err(e),
        };
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        correlations.push(-value);
        if step == steps {
            break;
        }
        g.backward(loss)?;
        let mut grads = gv.grads(&g);
        grads.extend(gt.grads(&g));
        let mut tensors = block.visual.tensors_mut();
        tensors.extend(block.text.tensors_mut());
        opt.step(&mut tensors, &grads)?;
    }
    Ok(DccaTrace { block, correlations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_shape() -> DccaShape {
        DccaShape {
            visual_in: 4,
            text_in: 3,
            hidden: vec![6],
            output_dim: 2,
        }
    }

    #[test]
    fn reference_shape() {
        let s = DccaShape::reference();
        assert_eq!((s.visual_in, s.text_in, s.output_dim), (512, 768, 20));
        assert_eq!(s.hidden, vec![1024, 1024]);
    }

    #[test]
    fn block_validation() {
        let b = DccaBlock::new(&small_shape(), 1e-4, None, 0).unwrap();
        assert_eq!(b.top_k, 2);
        assert_eq!(b.text.layers().last().unwrap().activation, Activation::Linear);
        assert!(DccaBlock::new(&small_shape(), 0.0, None, 0).is_err());
        assert!(DccaBlock::new(&small_shape(), 1e-4, Some(3), 0).is_err());
        let other = DccaBlock::new(
            &DccaShape {
                output_dim: 3,
                ..small_shape()
            },
            1e-4,
            None,
            0,
        )
        .unwrap();
        assert!(DccaBlock::from_parts(b.visual.clone(), other.text, 1e-4, 2).is_err());
    }

    #[test]
    fn zero_steps_returns_block_unchanged() {
        let b = DccaBlock::new(&small_shape(), 1e-4, None, 3).unwrap();
        let v = Matrix::from_fn(10, 4, |i, j| ((i * 3 + j) % 7) as f64 * 0.1);
        let t = Matrix::from_fn(10, 3, |i, j| ((i * 5 + j) % 4) as f64 * 0.2);
        let out = train_dcca(&b, &v, &t, 0, 0.001).unwrap();
        assert_eq!(out.block, b);
        assert_eq!(out.correlations.len(), 1);
    }

    #[test]
    fn rejects_mismatched_views() {
        let b = DccaBlock::new(&small_shape(), 1e-4, None, 3).unwrap();
        assert!(train_dcca(&b, &Matrix::zeros(5, 4), &Matrix::zeros(6, 3), 1, 0.001).is_err());
        assert!(train_dcca(&b, &Matrix::zeros(1, 4), &Matrix::zeros(1, 3), 1, 0.001).is_err());
    }

    #[test]
    fn diverging_training_reports_step() {
        let b = DccaBlock::new(&small_shape(), 1e-4, None, 3).unwrap();
        let v = Matrix::from_fn(10, 4, |i, j| ((i * 3 + j) % 7) as f64);
        let t = Matrix::from_fn(10, 3, |i, j| ((i * 5 + j) % 4) as f64);
        match train_dcca(&b, &v, &t, 3, 1e308) {
            Err(Error::Diverged { step }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
