//! Finite-difference checks of every analytic gradient the library relies on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{gradcheck, Graph, GradcheckReport};
use crate::cca::{correlation_gradient, correlation_objective, CcaGradient, CcaStats, NegCorrelationLoss};
use crate::encoders::{cross_entropy, init_mlp, Activation};
use crate::error::Result;
use crate::heads::{gnn_graph, matching_graph, prototypical_graph, relation_graph, GnnParams, GnnShape};
use crate::linalg::Matrix;

/// Worst per-entry relative error allowed for the closed-form CCA gradient.
pub const CCA_TOLERANCE: f64 = 1e-5;
/// Allowed infinity-norm relative error for reverse-mode graph gradients.
pub const GRAPH_TOLERANCE: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;
const CCA_FD_STEP: f64 = 3e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, max_rel_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_rel_error,
            tolerance,
            // NaN never passes
            passed: max_rel_error < tolerance,
        }
    }

    pub fn from_report(name: impl Into<String>, report: &GradcheckReport, tolerance: f64) -> Self {
        Self::new(name, report.max_rel_error(), tolerance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn new(seed: u64, checks: Vec<CheckResult>) -> Self {
        let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
        Self { seed, checks, passed }
    }

    /// One `name error tolerance PASS|FAIL` line per check.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{:<24} {:>10.3e} < {:.0e}  {}\n",
                c.name,
                c.max_rel_error,
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Fourth-order central difference of the CCA objective in one view.
pub fn cca_fd_gradient(z1: &Matrix, z2: &Matrix, r1: f64, k: usize, first: bool, h: f64) -> Result<Matrix> {
    let base = if first { z1 } else { z2 };
    let f = |idx: usize, delta: f64| -> Result<f64> {
        let mut m = base.clone();
        m.data_mut()[idx] += delta;
        let (a, b) = if first { (&m, z2) } else { (z1, &m) };
        Ok(correlation_objective(a, b, r1, k)?.0)
    };
    let mut out = Matrix::zeros(base.rows(), base.cols());
    for idx in 0..base.data().len() {
        let d1 = f(idx, h)? - f(idx, -h)?;
        let d2 = f(idx, 2.0 * h)? - f(idx, -2.0 * h)?;
        out.data_mut()[idx] = (8.0 * d1 - d2) / (12.0 * h);
    }
    Ok(out)
}

fn worst_entry_rel(a: &Matrix, n: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(n.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Worst per-entry relative error of `grad` against finite differences.
pub fn cca_gradient_error<G>(z1: &Matrix, z2: &Matrix, r1: f64, k: usize, grad: G) -> Result<f64>
where
    G: Fn(&CcaStats, &Matrix, &Matrix) -> Result<CcaGradient>,
{
    let (_, stats) = correlation_objective(z1, z2, r1, k)?;
    let g = grad(&stats, z1, z2)?;
    let e1 = worst_entry_rel(&g.dz1, &cca_fd_gradient(z1, z2, r1, k, true, CCA_FD_STEP)?);
    let e2 = worst_entry_rel(&g.dz2, &cca_fd_gradient(z1, z2, r1, k, false, CCA_FD_STEP)?);
    Ok(e1.max(e2))
}

/// The 100-instance grid over `N in {20, 50}`, `d in {2, 3, 5}`,
/// `r1 in {1e-4, 1e-3}` with correlated uniform views.
pub fn cca_grid<G>(seed: u64, grad: G) -> Result<f64>
where
    G: Fn(&CcaStats, &Matrix, &Matrix) -> Result<CcaGradient>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for inst in 0..100usize {
        let n = [20, 50][inst % 2];
        let d = [2, 3, 5][inst % 3];
        let r1 = [1e-4, 1e-3][(inst / 2) % 2];
        let z1 = uniform(n, d, &mut rng);
        let z2 = z1.scale(0.5).add(&uniform(n, d, &mut rng))?;
        worst = worst.max(cca_gradient_error(&z1, &z2, r1, d, &grad)?);
    }
    Ok(worst)
}

fn mlp_cross_entropy(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let mlp = init_mlp(&[4, 6, 3], &[Activation::Tanh, Activation::Linear], rng.random())?;
    let x = uniform(7, 4, rng);
    let labels = [0, 1, 2, 0, 1, 2, 1];
    let params: Vec<Matrix> = mlp.tensors().into_iter().cloned().collect();
    gradcheck(&params, FD_STEP, |g, ids| {
        let nodes = mlp.bind(ids)?;
        let xi = g.input(x.clone());
        let out = nodes.forward(g, xi, 4)?;
        Ok(cross_entropy(g, out, &labels))
    })
}

fn dcca_loss(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let acts = [Activation::Tanh, Activation::Linear];
    let g_net = init_mlp(&[6, 8, 3], &acts, rng.random())?;
    let h_net = init_mlp(&[5, 8, 3], &acts, rng.random())?;
    let v = uniform(30, 6, rng);
    let t = Matrix::concat_cols(&[&v.column_block(0, 3), &uniform(30, 2, rng)])?;
    let mut params: Vec<Matrix> = g_net.tensors().into_iter().cloned().collect();
    params.extend(h_net.tensors().into_iter().cloned());
    let op = NegCorrelationLoss::new(1e-3, 3);
    gradcheck(&params, FD_STEP, |g, ids| {
        let gn = g_net.bind(&ids[..4])?;
        let hn = h_net.bind(&ids[4..])?;
        let vi = g.input(v.clone());
        let ti = g.input(t.clone());
        let z1 = gn.forward(g, vi, 6)?;
        let z2 = hn.forward(g, ti, 5)?;
        Ok(g.custom(&[z1, z2], op.clone()))
    })
}

/// Metric heads, differentiated through the embeddings of an episode.
fn metric_head(rng: &mut ChaCha8Rng, matching: bool) -> Result<GradcheckReport> {
    let s = uniform(6, 3, rng);
    let q = uniform(4, 3, rng);
    let labels = [0, 0, 1, 1, 2, 2];
    gradcheck(&[s, q], FD_STEP, |g: &mut Graph, ids| {
        let logits = if matching {
            matching_graph(g, ids[0], &labels, 3, ids[1])?
        } else {
            prototypical_graph(g, ids[0], &labels, 3, ids[1])?
        };
        Ok(g.softmax_cross_entropy(logits, &[0, 1, 2, 1]))
    })
}

fn relation_head(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let rel = init_mlp(&[6, 8, 1], &[Activation::Tanh, Activation::Linear], rng.random())?;
    let mut tensors: Vec<Matrix> = rel.tensors().into_iter().cloned().collect();
    tensors.push(uniform(6, 3, rng));
    tensors.push(uniform(4, 3, rng));
    let labels = [0, 0, 1, 1, 2, 2];
    gradcheck(&tensors, FD_STEP, |g, ids| {
        let nodes = rel.bind(&ids[..4])?;
        let logits = relation_graph(g, ids[4], &labels, 3, ids[5], 4, &nodes)?;
        Ok(g.softmax_cross_entropy(logits, &[0, 1, 2, 1]))
    })
}

fn graph_head(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let shape = GnnShape {
        emb_dim: 3,
        way: 2,
        hidden: 5,
        edge_hidden: 4,
        rounds: 2,
    };
    let mut params = GnnParams::new(&shape, rng.random())?;
    // keep edge activations away from the relu kink at zero distance
    for (k, t) in params.tensors_mut().into_iter().enumerate() {
        if t.rows() == 1 {
            *t = Matrix::from_fn(1, t.cols(), |_, j| 0.05 + 0.03 * ((k + j) % 4) as f64);
        }
    }
    let emb = uniform(7, 3, rng).scale(2.0);
    let labels = [0, 1, 0, 1];
    let tensors: Vec<Matrix> = params.tensors().into_iter().cloned().collect();
    gradcheck(&tensors, FD_STEP, |g, ids| {
        let nodes = params.bind(ids)?;
        let x = g.input(emb.clone());
        let out = gnn_graph(g, x, 3, &labels, 3, &nodes)?;
        Ok(g.softmax_cross_entropy(out.logits, &[1, 0, 1]))
    })
}

/// Runs every check; deterministic in `seed`.
pub fn run_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = vec![CheckResult::new(
        "cca-closed-form",
        cca_grid(rng.random(), correlation_gradient)?,
        CCA_TOLERANCE,
    )];
    type Check = fn(&mut ChaCha8Rng) -> Result<GradcheckReport>;
    let graph_checks: [(&str, Check); 6] = [
        ("mlp-cross-entropy", mlp_cross_entropy),
        ("dcca-loss", dcca_loss),
        ("prototypical-head", |r| metric_head(r, false)),
        ("matching-head", |r| metric_head(r, true)),
        ("relation-head", relation_head),
        ("graph-metric-head", graph_head),
    ];
    for (name, f) in graph_checks {
        checks.push(CheckResult::from_report(name, &f(&mut rng)?, GRAPH_TOLERANCE));
    }
    Ok(SuiteReport::new(seed, checks))
}
