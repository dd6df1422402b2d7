use std::cmp::Ordering;

use super::scores::{HeadScores, HeadTag};
use crate::autodiff::{Graph, NodeId};
use crate::encoders::{MlpNodes, MlpParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Number of classes implied by `labels` (largest label plus one), checking
/// that each class has at least one member.
pub fn infer_way(labels: &[usize]) -> Result<usize> {
    let way = labels.iter().max().map_or(0, |m| m + 1);
    check_labels(labels, way)?;
    Ok(way)
}

fn check_labels(labels: &[usize], way: usize) -> Result<()> {
    if way == 0 {
        return Err(Error::InvalidArgument("no support labels".into()));
    }
    let mut counts = vec![0usize; way];
    for &l in labels {
        if l >= way {
            return Err(Error::InvalidArgument(format!("label {l} outside 0..{way}")));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("class {c} has no support samples")));
    }
    Ok(())
}

fn check_rows(op: &'static str, support: &Matrix, labels: &[usize], query: &Matrix) -> Result<()> {
    if support.rows() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{op}: {} support rows but {} labels",
            support.rows(),
            labels.len()
        )));
    }
    if support.cols() != query.cols() {
        return Err(Error::Shape {
            op,
            left: support.shape(),
            right: query.shape(),
        });
    }
    Ok(())
}

/// `way x S` matrix averaging the support rows of each class.
pub fn class_mean_matrix(labels: &[usize], way: usize) -> Result<Matrix> {
    check_labels(labels, way)?;
    let mut counts = vec![0usize; way];
    for &l in labels {
        counts[l] += 1;
    }
    Ok(Matrix::from_fn(way, labels.len(), |c, s| {
        if labels[s] == c {
            1.0 / counts[c] as f64
        } else {
            0.0
        }
    }))
}

/// `S x way` indicator matrix.
pub fn one_hot(labels: &[usize], way: usize) -> Matrix {
    Matrix::from_fn(labels.len(), way, |s, c| if labels[s] == c { 1.0 } else { 0.0 })
}

/// Class means with each class summed in a canonical (lexicographic) row
/// order, so the result does not depend on how the support is ordered.
pub fn class_means(support: &Matrix, labels: &[usize], way: usize) -> Result<Matrix> {
    check_labels(labels, way)?;
    let d = support.cols();
    let mut out = Matrix::zeros(way, d);
    for c in 0..way {
        let mut rows: Vec<&[f64]> = (0..labels.len())
            .filter(|&s| labels[s] == c)
            .map(|s| support.row(s))
            .collect();
        rows.sort_by(|a, b| lexicographic(a, b));
        let n = rows.len() as f64;
        for j in 0..d {
            out.row_mut(c)[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        }
    }
    Ok(out)
}

pub(crate) fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// `logit[q][c] = -|query_q - prototype_c|^2`.
pub fn prototypical_logits(support: &Matrix, labels: &[usize], query: &Matrix) -> Result<HeadScores> {
    check_rows("prototypical_logits", support, labels, query)?;
    let protos = class_means(support, labels, infer_way(labels)?)?;
    let logits = Matrix::from_fn(query.rows(), protos.rows(), |q, c| {
        -query
            .row(q)
            .iter()
            .zip(protos.row(c))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    });
    HeadScores::new(logits, HeadTag::Prototypical)
}

/// `logit[q][c] = sum over class-c support of cos(query_q, support_s)`.
pub fn matching_logits(support: &Matrix, labels: &[usize], query: &Matrix) -> Result<HeadScores> {
    check_rows("matching_logits", support, labels, query)?;
    let way = infer_way(labels)?;
    let norms = |m: &Matrix, what: &str| -> Result<Vec<f64>> {
        (0..m.rows())
            .map(|i| {
                let n = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    Err(Error::InvalidArgument(format!("{what} row {i} has zero norm")))
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let (ns, nq) = (norms(support, "support")?, norms(query, "query")?);
    let mut logits = Matrix::zeros(query.rows(), way);
    for (q, &nqq) in nq.iter().enumerate() {
        for (s, &l) in labels.iter().enumerate() {
            let dot: f64 = query.row(q).iter().zip(support.row(s)).map(|(a, b)| a * b).sum();
            logits.row_mut(q)[l] += dot / (nqq * ns[s]);
        }
    }
    HeadScores::new(logits, HeadTag::Matching)
}

/// Rows `q * S + s` hold `[query_q, support_s]`.
fn pair_matrix(support: &Matrix, query: &Matrix) -> Matrix {
    let (s, d) = support.shape();
    let mut data = Vec::with_capacity(query.rows() * s * 2 * d);
    for q in 0..query.rows() {
        for k in 0..s {
            data.extend_from_slice(query.row(q));
            data.extend_from_slice(support.row(k));
        }
    }
    Matrix::new(query.rows() * s, 2 * d, data).expect("pair widths")
}

fn check_relation(rel: &MlpParams, dim: usize) -> Result<()> {
    if rel.in_dim() != 2 * dim || rel.out_dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "relation network maps {} -> {}, expected {} -> 1",
            rel.in_dim(),
            rel.out_dim(),
            2 * dim
        )));
    }
    Ok(())
}

/// `logit[q][c]` is the mean relation score of `query_q` against the class-c
/// support.
pub fn relation_scores(support: &Matrix, labels: &[usize], query: &Matrix, rel: &MlpParams) -> Result<HeadScores> {
    check_rows("relation_scores", support, labels, query)?;
    check_relation(rel, support.cols())?;
    let way = infer_way(labels)?;
    let r = rel.apply(&pair_matrix(support, query))?;
    let per_pair = Matrix::new(query.rows(), support.rows(), r.into_data())?;
    let logits = per_pair.matmul_t(&class_mean_matrix(labels, way)?)?;
    HeadScores::new(logits, HeadTag::Relation)
}

/// Differentiable prototypical logits (`Q x way`).
pub fn prototypical_graph(g: &mut Graph, support: NodeId, labels: &[usize], way: usize, query: NodeId) -> Result<NodeId> {
    let m = g.input(class_mean_matrix(labels, way)?);
    let protos = g.matmul(m, support);
    Ok(g.neg_sq_distance(query, protos))
}

pub fn matching_graph(g: &mut Graph, support: NodeId, labels: &[usize], way: usize, query: NodeId) -> Result<NodeId> {
    check_labels(labels, way)?;
    let sn = g.row_normalize(support);
    let qn = g.row_normalize(query);
    let sim = g.matmul_t(qn, sn);
    let y = g.input(one_hot(labels, way));
    Ok(g.matmul(sim, y))
}

/// Differentiable relation scores; `n_query` is the row count of `query`.
pub fn relation_graph(
    g: &mut Graph,
    support: NodeId,
    labels: &[usize],
    way: usize,
    query: NodeId,
    n_query: usize,
    rel: &MlpNodes,
) -> Result<NodeId> {
    let n_support = labels.len();
    let q_idx: Vec<usize> = (0..n_query).flat_map(|q| std::iter::repeat_n(q, n_support)).collect();
    let s_idx: Vec<usize> = (0..n_query).flat_map(|_| 0..n_support).collect();
    let qs = g.gather_rows(query, &q_idx);
    let ss = g.gather_rows(support, &s_idx);
    let pairs = g.concat_cols(&[qs, ss]);
    let r = rel.forward(g, pairs, rel.in_dim())?;
    let grid = g.reshape(r, n_query, n_support);
    let mt = g.input(class_mean_matrix(labels, way)?.transpose());
    Ok(g.matmul(grid, mt))
}
