use super::Op;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

pub(super) fn forward(op: &Op, x: &[&Matrix]) -> Result<Matrix> {
    match op {
        Op::Input | Op::Param => unreachable!("leaves carry their value"),
        Op::MatMul(..) => x[0].matmul(x[1]),
        Op::MatMulT(..) => x[0].matmul_t(x[1]),
        Op::AddBias(..) => {
            let (a, b) = (x[0], x[1]);
            if b.rows() != 1 || b.cols() != a.cols() {
                return Err(shape_err("add_bias", a, b));
            }
            let mut out = a.clone();
            for i in 0..out.rows() {
                out.row_mut(i).iter_mut().zip(b.data()).for_each(|(o, v)| *o += v);
            }
            Ok(out)
        }
        Op::Add(..) => x[0].add(x[1]),
        Op::Scale(_, s) => Ok(x[0].scale(*s)),
        Op::Tanh(_) => Ok(x[0].map(f64::tanh)),
        Op::Relu(_) => Ok(x[0].map(|v| v.max(0.0))),
        Op::SoftmaxCrossEntropy(_, labels) => {
            let logits = x[0];
            check_labels(logits, labels)?;
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row = logits.row(i);
                total += log_sum_exp(row) - row[y];
            }
            Ok(Matrix::scalar(total / labels.len() as f64))
        }
        Op::NegSqDistance(..) => {
            let (a, b) = (x[0], x[1]);
            if a.cols() != b.cols() {
                return Err(shape_err("neg_sq_distance", a, b));
            }
            Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| {
                -a.row(i)
                    .iter()
                    .zip(b.row(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
            }))
        }
        Op::RowNormalize(_) => {
            let a = x[0];
            let mut out = a.clone();
            for i in 0..a.rows() {
                let norm = dot(a.row(i), a.row(i)).sqrt();
                if norm == 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "row {i} has zero norm and cannot be normalized"
                    )));
                }
                out.row_mut(i).iter_mut().for_each(|v| *v /= norm);
            }
            Ok(out)
        }
        Op::RowSoftmax(_) => Ok(row_softmax(x[0])),
        Op::ConcatCols(_) => Matrix::concat_cols(x),
        Op::GatherRows(_, rows) => {
            let a = x[0];
            if let Some(&bad) = rows.iter().find(|&&r| r >= a.rows()) {
                return Err(Error::InvalidArgument(format!(
                    "gather row {bad} out of range for {} rows",
                    a.rows()
                )));
            }
            Ok(a.select_rows(rows))
        }
        Op::PairwiseAbsDiff(_) => {
            let a = x[0];
            let (n, f) = a.shape();
            let mut data = Vec::with_capacity(n * n * f);
            for i in 0..n {
                for j in 0..n {
                    data.extend(a.row(i).iter().zip(a.row(j)).map(|(p, q)| (p - q).abs()));
                }
            }
            Matrix::new(n * n, f, data)
        }
        Op::Reshape(_, r, c) => {
            let a = x[0];
            if r * c != a.rows() * a.cols() {
                return Err(Error::Shape {
                    op: "reshape",
                    left: a.shape(),
                    right: (*r, *c),
                });
            }
            Matrix::new(*r, *c, a.data().to_vec())
        }
        Op::Sum(_) => Ok(Matrix::scalar(x[0].sum())),
        Op::Custom(_, f) => f.forward(x),
    }
}

pub(super) fn backward(op: &Op, x: &[&Matrix], out: &Matrix, g: &Matrix) -> Result<Vec<Matrix>> {
    Ok(match op {
        Op::Input | Op::Param => vec![],
        Op::MatMul(..) => {
            // C = A B: dA = G B', dB = A' G
            vec![g.matmul_t(x[1])?, x[0].t_matmul(g)?]
        }
        Op::MatMulT(..) => {
            // C = A B': dA = G B, dB = G' A
            vec![g.matmul(x[1])?, g.t_matmul(x[0])?]
        }
        Op::AddBias(..) => {
            let mut db = Matrix::zeros(1, g.cols());
            for i in 0..g.rows() {
                db.row_mut(0).iter_mut().zip(g.row(i)).for_each(|(d, v)| *d += v);
            }
            vec![g.clone(), db]
        }
        Op::Add(..) => vec![g.clone(), g.clone()],
        Op::Scale(_, s) => vec![g.scale(*s)],
        Op::Tanh(_) => vec![g.hadamard(&out.map(|t| 1.0 - t * t))?],
        Op::Relu(_) => {
            let mut d = g.clone();
            d.data_mut()
                .iter_mut()
                .zip(x[0].data())
                .for_each(|(d, &v)| {
                    if v <= 0.0 {
                        *d = 0.0
                    }
                });
            vec![d]
        }
        Op::SoftmaxCrossEntropy(_, labels) => {
            let scale = g[(0, 0)] / labels.len() as f64;
            let mut d = row_softmax(x[0]);
            for (i, &y) in labels.iter().enumerate() {
                d[(i, y)] -= 1.0;
            }
            vec![d.scale(scale)]
        }
        Op::NegSqDistance(..) => {
            let (a, b) = (x[0], x[1]);
            let mut da = Matrix::zeros(a.rows(), a.cols());
            let mut db = Matrix::zeros(b.rows(), b.cols());
            for i in 0..a.rows() {
                for j in 0..b.rows() {
                    let w = 2.0 * g[(i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    for k in 0..a.cols() {
                        let diff = a[(i, k)] - b[(j, k)];
                        da[(i, k)] -= w * diff;
                        db[(j, k)] += w * diff;
                    }
                }
            }
            vec![da, db]
        }
        Op::RowNormalize(_) => {
            let a = x[0];
            let mut d = Matrix::zeros(a.rows(), a.cols());
            for i in 0..a.rows() {
                let norm = dot(a.row(i), a.row(i)).sqrt();
                let y = out.row(i);
                let gy = dot(g.row(i), y);
                for ((dv, gv), yv) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(y) {
                    *dv = (gv - yv * gy) / norm;
                }
            }
            vec![d]
        }
        Op::RowSoftmax(_) => {
            let mut d = Matrix::zeros(out.rows(), out.cols());
            for i in 0..out.rows() {
                let y = out.row(i);
                let gy = dot(g.row(i), y);
                for ((dv, gv), yv) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(y) {
                    *dv = yv * (gv - gy);
                }
            }
            vec![d]
        }
        Op::ConcatCols(_) => {
            let mut start = 0;
            x.iter()
                .map(|p| {
                    let block = g.column_block(start, start + p.cols());
                    start += p.cols();
                    block
                })
                .collect()
        }
        Op::GatherRows(_, rows) => {
            let mut d = Matrix::zeros(x[0].rows(), x[0].cols());
            for (k, &r) in rows.iter().enumerate() {
                d.row_mut(r).iter_mut().zip(g.row(k)).for_each(|(a, b)| *a += b);
            }
            vec![d]
        }
        Op::PairwiseAbsDiff(_) => {
            let a = x[0];
            let (n, f) = a.shape();
            let mut d = Matrix::zeros(n, f);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let grow = g.row(i * n + j);
                    for k in 0..f {
                        let diff = a[(i, k)] - a[(j, k)];
                        let s = if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        d[(i, k)] += s * grow[k];
                        d[(j, k)] -= s * grow[k];
                    }
                }
            }
            vec![d]
        }
        Op::Reshape(..) => vec![Matrix::new(x[0].rows(), x[0].cols(), g.data().to_vec())?],
        Op::Sum(_) => vec![Matrix::filled(x[0].rows(), x[0].cols(), g[(0, 0)])],
        Op::Custom(_, f) => {
            let grads = f.backward(x, out, g)?;
            if grads.len() != x.len() {
                return Err(Error::InvalidArgument(format!(
                    "custom op {} returned {} gradients for {} inputs",
                    f.name(),
                    grads.len(),
                    x.len()
                )));
            }
            for (gr, xi) in grads.iter().zip(x) {
                if gr.shape() != xi.shape() {
                    return Err(shape_err("custom gradient", gr, xi));
                }
            }
            grads
        }
    })
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() || labels.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn row_softmax(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}
