//! Closed-form linear CCA, computed through Cholesky whitening rather than
//! the symmetric inverse square roots used by the deep objective, so the two
//! can be checked against each other.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower, svd, Matrix};

#[derive(Clone, Debug)]
pub struct LinearCca {
    /// Leading canonical correlations, descending.
    pub correlations: Vec<f64>,
    /// `p x k` projection for the first view.
    pub wx: Matrix,
    /// `q x k` projection for the second view.
    pub wy: Matrix,
}

impl LinearCca {
    pub fn total(&self) -> f64 {
        self.correlations.iter().sum()
    }
}

/// Hotelling CCA of `x` (N x p) and `y` (N x q) with ridge `r1` added to
/// both auto-covariances.
pub fn linear_cca_oracle(x: &Matrix, y: &Matrix, k: usize, r1: f64) -> Result<LinearCca> {
    let n = x.rows();
    let (p, q) = (x.cols(), y.cols());
    if y.rows() != n {
        return Err(Error::Shape {
            op: "linear_cca_oracle",
            left: x.shape(),
            right: y.shape(),
        });
    }
    if n <= p.max(q) {
        return Err(Error::TooFewSamples {
            needed: p.max(q) + 1,
            got: n,
        });
    }
    if k == 0 || k > p.min(q) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            p.min(q)
        )));
    }

    let xc = subtract_means(x);
    let yc = subtract_means(y);
    let denom = (n - 1) as f64;
    let mut sxx = naive_cross(&xc, &xc, denom);
    let mut syy = naive_cross(&yc, &yc, denom);
    let sxy = naive_cross(&xc, &yc, denom);
    for i in 0..p {
        sxx[(i, i)] += r1;
    }
    for i in 0..q {
        syy[(i, i)] += r1;
    }

    let rank_err = |e: Error, view: &str| match e {
        Error::EigenvalueTooSmall { index, .. } => Error::InvalidArgument(format!(
            "{view} covariance is rank deficient at pivot {index}; increase r1"
        )),
        other => other,
    };
    let lx = cholesky(&sxx).map_err(|e| rank_err(e, "first view"))?;
    let ly = cholesky(&syy).map_err(|e| rank_err(e, "second view"))?;

    // K = Lx^{-1} Sxy Ly^{-T}
    let a = solve_lower(&lx, &sxy)?;
    let kt = solve_lower(&ly, &a.transpose())?;
    let kmat = kt.transpose();
    let dec = svd(&kmat)?;

    let uk = dec.u.column_block(0, k);
    let vk = dec.vt.transpose().column_block(0, k);
    Ok(LinearCca {
        correlations: dec.s[..k].to_vec(),
        wx: solve_upper_transposed(&lx, &uk),
        wy: solve_upper_transposed(&ly, &vk),
    })
}

fn subtract_means(m: &Matrix) -> Matrix {
    let (n, c) = m.shape();
    let mut out = m.clone();
    for j in 0..c {
        let mut mean = 0.0;
        for i in 0..n {
            mean += m[(i, j)];
        }
        mean /= n as f64;
        for i in 0..n {
            out[(i, j)] -= mean;
        }
    }
    out
}

fn naive_cross(a: &Matrix, b: &Matrix, denom: f64) -> Matrix {
    Matrix::from_fn(a.cols(), b.cols(), |i, j| {
        let mut s = 0.0;
        for r in 0..a.rows() {
            s += a[(r, i)] * b[(r, j)];
        }
        s / denom
    })
}

/// Solves `L' X = B` for lower-triangular `L`.
fn solve_upper_transposed(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[(k, i)];
            for j in 0..x.cols() {
                let v = x[(k, j)];
                x[(i, j)] -= lki * v;
            }
        }
        let d = l[(i, i)];
        x.row_mut(i).iter_mut().for_each(|v| *v /= d);
    }
    x
}

/// Sample Pearson correlation of two equally long series.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(rows: usize, cols: usize, mut state: u64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn identical_views_correlate_fully() {
        let x = lcg(200, 3, 4);
        let cca = linear_cca_oracle(&x, &x, 3, 1e-6).unwrap();
        for c in &cca.correlations {
            assert!((c - 1.0).abs() < 1e-3, "{c}");
        }
    }

    #[test]
    fn constant_second_view_gives_zero() {
        let x = lcg(50, 2, 8);
        let y = Matrix::filled(50, 2, 3.0);
        let cca = linear_cca_oracle(&x, &y, 2, 1e-4).unwrap();
        assert!(cca.correlations.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn projections_realize_canonical_correlations() {
        let x = lcg(300, 3, 1);
        let noise = lcg(300, 2, 2);
        let y = Matrix::from_fn(300, 2, |i, j| x[(i, j)] + 0.5 * x[(i, 2)] + noise[(i, j)]);
        let cca = linear_cca_oracle(&x, &y, 2, 0.0).unwrap();
        let px = x.matmul(&cca.wx).unwrap();
        let py = y.matmul(&cca.wy).unwrap();
        for i in 0..2 {
            let r = pearson(&px.column(i), &py.column(i));
            assert!((r - cca.correlations[i]).abs() < 1e-8);
        }
        let cross = pearson(&px.column(0), &px.column(1));
        assert!(cross.abs() < 1e-8);
    }

    #[test]
    fn errors() {
        let x = lcg(3, 3, 1);
        assert!(matches!(
            linear_cca_oracle(&x, &x, 1, 1e-3),
            Err(Error::TooFewSamples { .. })
        ));
        let x = lcg(10, 2, 1);
        assert!(linear_cca_oracle(&x, &x, 3, 1e-3).is_err());
        let dup = Matrix::from_fn(10, 2, |i, _| i as f64);
        assert!(linear_cca_oracle(&dup, &x, 1, 0.0).is_err());
    }
}
