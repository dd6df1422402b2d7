//! Jacobi-family decompositions for the small dense matrices the CCA math
//! produces (at most a few dozen rows and columns).

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Default floor below which an eigenvalue is treated as non-positive.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;

/// Thin singular value decomposition `A = U diag(S) Vt`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *x *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformant")
    }
}

/// One-sided (Hestenes) Jacobi SVD. Singular values are sorted descending.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    a.ensure_finite("svd input")?;
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        });
    }
    svd_tall(a)
}

fn svd_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    // Row j of `w` is column j of the working matrix A V; likewise for `v`.
    let mut w = a.transpose();
    let mut v = Matrix::identity(n);

    let tol = f64::EPSILON * m as f64;
    let null = (f64::EPSILON * a.frobenius_norm()).powi(2);
    let mut converged = n == 1;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(w.row(p), w.row(p));
                let beta = dot(w.row(q), w.row(q));
                let gamma = dot(w.row(p), w.row(q));
                if gamma == 0.0 || alpha.min(beta) <= null || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence {
            op: "svd",
            sweeps: MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = (0..n).map(|j| dot(w.row(j), w.row(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = s[0];
    let tiny = smax * 1e-15;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if norms[j] > tiny && norms[j] > 0.0 {
            u_cols.push(w.row(j).iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            deficient.push(slot);
        }
    }
    for slot in deficient {
        u_cols[slot] = orthogonal_complement_vector(&u_cols, slot, m);
    }

    let u = Matrix::from_fn(m, n, |i, k| u_cols[k][i]);
    let vt = Matrix::from_fn(n, n, |k, i| v[(order[k], i)]);
    Ok(Svd { u, s, vt })
}

#[inline]
fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.data_mut();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Unit vector orthogonal to every populated column except `skip`.
fn orthogonal_complement_vector(cols: &[Vec<f64>], skip: usize, m: usize) -> Vec<f64> {
    let mut best = vec![0.0; m];
    let mut best_norm = -1.0;
    for k in 0..m {
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        for _ in 0..2 {
            for (j, c) in cols.iter().enumerate() {
                if j == skip {
                    continue;
                }
                let proj = dot(&e, c);
                e.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = dot(&e, &e).sqrt();
        if norm > best_norm {
            best_norm = norm;
            best = e;
        }
        if best_norm > 0.5 {
            break;
        }
    }
    best.iter_mut().for_each(|x| *x /= best_norm);
    best
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are sorted descending; eigenvectors are the columns of the
/// returned matrix.
pub fn sym_eig(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::Shape {
            op: "sym_eig",
            left: m.shape(),
            right: (m.cols(), m.rows()),
        });
    }
    m.ensure_finite("sym_eig input")?;
    let asym = m.max_asymmetry();
    if asym > 1e-9 * m.max_abs().max(1.0) {
        return Err(Error::NotSymmetric { max_asym: asym });
    }

    let mut a = m.clone();
    // Work on the exactly symmetric part.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.is_finite() {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.0
                };
                if t == 0.0 {
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            op: "sym_eig",
            sweeps: MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok((values, vectors))
}

/// Symmetric inverse square root `M^{-1/2}`.
///
/// Fails with [`Error::EigenvalueTooSmall`] naming the first eigenvalue (in
/// descending order) that does not exceed `eps`.
pub fn inv_sqrt_sym(m: &Matrix, eps: f64) -> Result<Matrix> {
    let (values, q) = sym_eig(m)?;
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, &v)| v <= eps) {
        return Err(Error::EigenvalueTooSmall { index, value, eps });
    }
    let mut scaled = q.clone();
    for i in 0..scaled.rows() {
        for (x, lambda) in scaled.row_mut(i).iter_mut().zip(&values) {
            *x /= lambda.sqrt();
        }
    }
    let r = scaled.matmul_t(&q)?;
    Ok(symmetrize(&r))
}

pub(crate) fn symmetrize(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Subtracts column means. A column is left alone once its mean is within
/// roundoff of zero (`8 eps max|z|`); the check runs before any subtraction,
/// so centering an already centered matrix returns the same bits.
pub fn center_rows(z: &Matrix) -> Result<Matrix> {
    if z.rows() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: z.rows(),
        });
    }
    let mut out = z.clone();
    for j in 0..out.cols() {
        for _ in 0..8 {
            let col = out.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let tol = 8.0 * f64::EPSILON * col.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if mean.abs() <= tol {
                break;
            }
            for i in 0..out.rows() {
                let v = out[(i, j)] - mean;
                out.row_mut(i)[j] = v;
            }
        }
    }
    Ok(out)
}

/// Lower-triangular Cholesky factor `L` with `M = L L'`. Pivots below
/// `n * eps * max diag` count as rank deficiency.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::Shape {
            op: "cholesky",
            left: m.shape(),
            right: (m.cols(), m.rows()),
        });
    }
    let mut l = Matrix::zeros(n, n);
    let max_diag = (0..n).fold(0.0f64, |acc, i| acc.max(m[(i, i)].abs()));
    let tol = f64::EPSILON * n as f64 * max_diag;
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol || !d.is_finite() {
            return Err(Error::EigenvalueTooSmall {
                index: j,
                value: d,
                eps: 0.0,
            });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L` by forward substitution.
pub fn solve_lower(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    if l.rows() != b.rows() || l.rows() != l.cols() {
        return Err(Error::Shape {
            op: "solve_lower",
            left: l.shape(),
            right: b.shape(),
        });
    }
    let n = l.rows();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik == 0.0 {
                continue;
            }
            for j in 0..x.cols() {
                let v = x[(k, j)];
                x[(i, j)] -= lik * v;
            }
        }
        let d = l[(i, i)];
        x.row_mut(i).iter_mut().for_each(|v| *v /= d);
    }
    Ok(x)
}

/// Orthonormalizes the columns of `a` with two passes of modified
/// Gram-Schmidt. Fails if the columns are (numerically) dependent.
pub fn orthonormalize_columns(a: &Matrix) -> Result<Matrix> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    for j in 0..n {
        for _ in 0..2 {
            for k in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let proj = dot(&rest[0], &done[k]);
                rest[0].iter_mut().zip(&done[k]).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = dot(&cols[j], &cols[j]).sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "column {j} is linearly dependent on earlier columns"
            )));
        }
        cols[j].iter_mut().for_each(|x| *x /= norm);
    }
    Ok(Matrix::from_fn(m, n, |i, j| cols[j][i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(rows: usize, cols: usize, mut state: u64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.s, vec![1.0, 1.0, 1.0]);

        let d = svd(&Matrix::from_diag(&[3.0, 2.0])).unwrap();
        assert_eq!(d.s, vec![3.0, 2.0]);
        assert!(d.u.max_abs_diff(&Matrix::identity(2)) < 1e-15);
        assert!(d.vt.max_abs_diff(&Matrix::identity(2)) < 1e-15);
    }

    #[test]
    fn svd_sorts_and_handles_wide_and_zero() {
        let d = svd(&Matrix::from_diag(&[1.0, 5.0, 2.0])).unwrap();
        assert_eq!(d.s, vec![5.0, 2.0, 1.0]);
        assert!(d.reconstruct().max_abs_diff(&Matrix::from_diag(&[1.0, 5.0, 2.0])) < 1e-14);

        let wide = lcg_matrix(2, 5, 3);
        let w = svd(&wide).unwrap();
        assert_eq!(w.u.shape(), (2, 2));
        assert_eq!(w.vt.shape(), (2, 5));
        assert!(w.reconstruct().max_abs_diff(&wide) < 1e-13);

        let zero = svd(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(zero.s, vec![0.0; 3]);
        let utu = zero.u.t_matmul(&zero.u).unwrap();
        assert!(utu.max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn svd_rank_deficient_keeps_orthonormal_u() {
        let mut a = lcg_matrix(5, 3, 9);
        for i in 0..5 {
            let v = a[(i, 0)];
            a[(i, 2)] = 2.0 * v;
        }
        let s = svd(&a).unwrap();
        assert!(s.s[2] < 1e-12);
        let utu = s.u.t_matmul(&s.u).unwrap();
        assert!(utu.max_abs_diff(&Matrix::identity(3)) < 1e-10);
        assert!(s.reconstruct().max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn svd_rejects_nonfinite() {
        let mut a = Matrix::identity(2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sym_eig_small_cases() {
        let (vals, _) = sym_eig(&Matrix::identity(2)).unwrap();
        assert_eq!(vals, vec![1.0, 1.0]);
        let (vals, q) = sym_eig(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert_eq!(vals, vec![9.0, 4.0]);
        assert!((q[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn inv_sqrt_diag_and_floor() {
        let r = inv_sqrt_sym(&Matrix::identity(3), DEFAULT_EIG_FLOOR).unwrap();
        assert!(r.max_abs_diff(&Matrix::identity(3)) < 1e-15);
        let r = inv_sqrt_sym(&Matrix::from_diag(&[4.0, 9.0]), DEFAULT_EIG_FLOOR).unwrap();
        assert!(r.max_abs_diff(&Matrix::from_diag(&[0.5, 1.0 / 3.0])) < 1e-15);

        let err = inv_sqrt_sym(&Matrix::from_diag(&[1.0, 0.0, 2.0]), 1e-10).unwrap_err();
        match err {
            Error::EigenvalueTooSmall { index, .. } => assert_eq!(index, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn center_examples() {
        let same = Matrix::from_rows(&[[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]]).unwrap();
        assert_eq!(center_rows(&same).unwrap(), Matrix::zeros(3, 2));
        let col = Matrix::column_vector(&[1.0, 2.0, 3.0]);
        assert_eq!(center_rows(&col).unwrap(), Matrix::column_vector(&[-1.0, 0.0, 1.0]));
        assert!(matches!(
            center_rows(&Matrix::zeros(1, 3)),
            Err(Error::TooFewSamples { .. })
        ));
        let z = lcg_matrix(10, 4, 1);
        let c = center_rows(&z).unwrap();
        assert!(c.column_means().iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let a = lcg_matrix(6, 4, 5);
        let spd = a.t_matmul(&a).unwrap().add(&Matrix::identity(4)).unwrap();
        let l = cholesky(&spd).unwrap();
        assert!(l.matmul_t(&l).unwrap().max_abs_diff(&spd) < 1e-12);
        let x = solve_lower(&l, &spd).unwrap();
        assert!(l.matmul(&x).unwrap().max_abs_diff(&spd) < 1e-12);
    }

    #[test]
    fn orthonormalize_gives_orthonormal_columns() {
        let q = orthonormalize_columns(&lcg_matrix(7, 3, 2)).unwrap();
        assert!(q.t_matmul(&q).unwrap().max_abs_diff(&Matrix::identity(3)) < 1e-14);
    }
}
