use serde::Serialize;

use super::{Graph, NodeId};
use crate::error::Result;
use crate::linalg::Matrix;

/// Finite-difference comparison for one parameter tensor.
#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub index: usize,
    pub shape: (usize, usize),
    /// `max |a - n| / max(g, 1e-8)` where `g` is the largest analytic or
    /// numeric gradient magnitude over all checked tensors: the infinity-norm
    /// relative error of the full gradient, restricted to this tensor. Stays
    /// meaningful for tensors whose true gradient is exactly zero.
    pub max_rel_error: f64,
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over entries. Dominated by
    /// finite-difference roundoff wherever the true gradient is near zero.
    pub max_entry_rel_error: f64,
    pub max_abs_error: f64,
    /// `max(max|a|, max|n|)` for this tensor.
    pub grad_scale: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn max_entry_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_entry_rel_error))
    }
}

/// Compares reverse-mode gradients against central differences with step `h`.
///
/// `build` receives a fresh graph and the node ids of `params` (inserted as
/// trainable leaves, in order) and returns the scalar loss node. It must be
/// deterministic.
pub fn gradcheck<F>(params: &[Matrix], h: f64, build: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| graph.param(p.clone())).collect();
    let loss = build(&mut graph, &ids)?;
    graph.forward()?;
    graph.backward(loss)?;
    let analytic: Vec<Matrix> = ids.iter().map(|&id| graph.grad_or_zeros(id)).collect();

    let mut report = GradcheckReport::default();
    for (pi, &id) in ids.iter().enumerate() {
        let base = params[pi].clone();
        let mut numeric = Matrix::zeros(base.rows(), base.cols());
        for k in 0..base.data().len() {
            let mut plus = base.clone();
            plus.data_mut()[k] += h;
            graph.set_leaf(id, plus)?;
            let fp = graph.forward_scalar(loss)?;
            let mut minus = base.clone();
            minus.data_mut()[k] -= h;
            graph.set_leaf(id, minus)?;
            let fm = graph.forward_scalar(loss)?;
            numeric.data_mut()[k] = (fp - fm) / (2.0 * h);
        }
        graph.set_leaf(id, base.clone())?;
        report.params.push(compare(pi, &analytic[pi], &numeric));
    }
    let scale = report.params.iter().fold(1e-8f64, |m, p| m.max(p.grad_scale));
    for p in &mut report.params {
        p.max_rel_error = p.max_abs_error / scale;
    }
    Ok(report)
}

pub(crate) fn compare(index: usize, analytic: &Matrix, numeric: &Matrix) -> ParamCheck {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        let diff = (a - n).abs();
        max_abs = max_abs.max(diff);
        max_rel = max_rel.max(diff / a.abs().max(n.abs()).max(1e-8));
    }
    let scale = analytic.max_abs().max(numeric.max_abs());
    ParamCheck {
        index,
        shape: analytic.shape(),
        max_rel_error: max_abs / scale.max(1e-8),
        grad_scale: scale,
        max_entry_rel_error: max_rel,
        max_abs_error: max_abs,
    }
}
