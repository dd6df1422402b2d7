use std::sync::Arc;

use crate::autodiff::CustomOp;
use crate::error::{Error, Result};
use crate::linalg::{center_rows, inv_sqrt_sym, svd, Matrix, DEFAULT_EIG_FLOOR};

/// Singular values closer than this are reported as near-degenerate.
pub const DEGENERATE_GAP: f64 = 1e-9;

/// Regularized sample covariances of two views.
#[derive(Clone, Debug)]
pub struct Covariances {
    pub sigma11: Matrix,
    pub sigma22: Matrix,
    pub sigma12: Matrix,
    /// Number of samples the estimates were computed from.
    pub n: usize,
}

/// `sigma11 = Z1c' Z1c / (N-1) + r1 I`, `sigma22` likewise and
/// `sigma12 = Z1c' Z2c / (N-1)`, where `Zic` is `Zi` with column means
/// removed. Rows are samples.
pub fn covariance_matrices(z1: &Matrix, z2: &Matrix, r1: f64) -> Result<Covariances> {
    let (z1c, z2c) = centered_pair(z1, z2)?;
    covariances_of_centered(&z1c, &z2c, r1)
}

fn centered_pair(z1: &Matrix, z2: &Matrix) -> Result<(Matrix, Matrix)> {
    if z1.rows() != z2.rows() {
        return Err(Error::Shape {
            op: "covariance_matrices",
            left: z1.shape(),
            right: z2.shape(),
        });
    }
    z1.ensure_finite("Z1")?;
    z2.ensure_finite("Z2")?;
    Ok((center_rows(z1)?, center_rows(z2)?))
}

fn covariances_of_centered(z1c: &Matrix, z2c: &Matrix, r1: f64) -> Result<Covariances> {
    if !(r1 >= 0.0 && r1.is_finite()) {
        return Err(Error::InvalidArgument(format!("regularizer r1 = {r1} must be >= 0")));
    }
    let n = z1c.rows();
    let scale = 1.0 / (n as f64 - 1.0);
    let mut sigma11 = z1c.t_matmul(z1c)?.scale(scale);
    let mut sigma22 = z2c.t_matmul(z2c)?.scale(scale);
    for i in 0..sigma11.rows() {
        sigma11[(i, i)] += r1;
    }
    for i in 0..sigma22.rows() {
        sigma22[(i, i)] += r1;
    }
    let sigma12 = z1c.t_matmul(z2c)?.scale(scale);
    Ok(Covariances {
        sigma11: symmetric_copy(&sigma11),
        sigma22: symmetric_copy(&sigma22),
        sigma12,
        n,
    })
}

fn symmetric_copy(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            out[(j, i)] = out[(i, j)];
        }
    }
    out
}

/// Everything the correlation objective computes on the way to its value.
#[derive(Clone, Debug)]
pub struct CcaStats {
    pub cov: Covariances,
    /// `sigma11^{-1/2} sigma12 sigma22^{-1/2}`
    pub t: Matrix,
    /// Singular values of `t`, descending.
    pub singular_values: Vec<f64>,
    /// Number of leading singular values summed by the objective.
    pub top_k: usize,
    inv_sqrt11: Matrix,
    inv_sqrt22: Matrix,
    u: Matrix,
    vt: Matrix,
}

impl CcaStats {
    pub fn sigma11(&self) -> &Matrix {
        &self.cov.sigma11
    }

    pub fn sigma22(&self) -> &Matrix {
        &self.cov.sigma22
    }

    pub fn sigma12(&self) -> &Matrix {
        &self.cov.sigma12
    }

    pub fn correlation(&self) -> f64 {
        self.singular_values[..self.top_k].iter().sum()
    }

    /// Smallest gap between consecutive singular values.
    pub fn min_gap(&self) -> f64 {
        self.singular_values
            .windows(2)
            .map(|w| (w[0] - w[1]).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Total correlation of the top `k` canonical directions: the sum of the
/// `k` largest singular values of `T`. With `k = d` this is the trace norm
/// of `T`.
pub fn correlation_objective(z1: &Matrix, z2: &Matrix, r1: f64, k: usize) -> Result<(f64, CcaStats)> {
    let (z1c, z2c) = centered_pair(z1, z2)?;
    let stats = stats_of_centered(&z1c, &z2c, r1, k)?;
    Ok((stats.correlation(), stats))
}

fn stats_of_centered(z1c: &Matrix, z2c: &Matrix, r1: f64, k: usize) -> Result<CcaStats> {
    let d = z1c.cols().min(z2c.cols());
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("top-k {k} must be in 1..={d}")));
    }
    let cov = covariances_of_centered(z1c, z2c, r1)?;
    let inv_sqrt11 = inv_sqrt_sym(&cov.sigma11, DEFAULT_EIG_FLOOR)?;
    let inv_sqrt22 = inv_sqrt_sym(&cov.sigma22, DEFAULT_EIG_FLOOR)?;
    let t = inv_sqrt11.matmul(&cov.sigma12)?.matmul(&inv_sqrt22)?;
    let dec = svd(&t)?;
    Ok(CcaStats {
        cov,
        t,
        singular_values: dec.s,
        top_k: k,
        inv_sqrt11,
        inv_sqrt22,
        u: dec.u,
        vt: dec.vt,
    })
}

/// Gradient of [`correlation_objective`] with respect to both views.
#[derive(Clone, Debug)]
pub struct CcaGradient {
    pub dz1: Matrix,
    pub dz2: Matrix,
    /// Set when two singular values of `T` are within [`DEGENERATE_GAP`];
    /// the objective is not smooth there and the gradient may be unstable.
    pub near_degenerate: bool,
}

/// Closed-form gradient. With `T = U D V'` truncated to the top `k` terms:
///
/// ```text
/// grad12 = S11^{-1/2} U V' S22^{-1/2}
/// grad11 = -1/2 S11^{-1/2} U D U' S11^{-1/2}
/// grad22 = -1/2 S22^{-1/2} V D V' S22^{-1/2}
/// dZ1 = (2 Z1c grad11 + Z2c grad12') / (N - 1)
/// dZ2 = (2 Z2c grad22 + Z1c grad12)  / (N - 1)
/// ```
pub fn correlation_gradient(stats: &CcaStats, z1: &Matrix, z2: &Matrix) -> Result<CcaGradient> {
    let (z1c, z2c) = centered_pair(z1, z2)?;
    if z1c.rows() != stats.cov.n || z1c.cols() != stats.t.rows() || z2c.cols() != stats.t.cols() {
        return Err(Error::InvalidArgument(
            "statistics were computed from differently shaped views".into(),
        ));
    }
    gradient_of_centered(stats, &z1c, &z2c)
}

fn gradient_of_centered(stats: &CcaStats, z1c: &Matrix, z2c: &Matrix) -> Result<CcaGradient> {
    let k = stats.top_k;
    let d1 = stats.t.rows();
    let d2 = stats.t.cols();
    let uk = stats.u.column_block(0, k);
    let vk = stats.vt.transpose().column_block(0, k);
    let dk = &stats.singular_values[..k];

    let scale_cols = |m: &Matrix| {
        let mut out = m.clone();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(dk).for_each(|(v, s)| *v *= s);
        }
        out
    };

    let grad12 = stats
        .inv_sqrt11
        .matmul(&uk.matmul_t(&vk)?)?
        .matmul(&stats.inv_sqrt22)?;
    let grad11 = stats
        .inv_sqrt11
        .matmul(&scale_cols(&uk).matmul_t(&uk)?)?
        .matmul(&stats.inv_sqrt11)?
        .scale(-0.5);
    let grad22 = stats
        .inv_sqrt22
        .matmul(&scale_cols(&vk).matmul_t(&vk)?)?
        .matmul(&stats.inv_sqrt22)?
        .scale(-0.5);
    debug_assert_eq!(grad12.shape(), (d1, d2));

    let norm = 1.0 / (stats.cov.n as f64 - 1.0);
    let dz1 = z1c
        .matmul(&grad11)?
        .scale(2.0)
        .add(&z2c.matmul_t(&grad12)?)?
        .scale(norm);
    let dz2 = z2c
        .matmul(&grad22)?
        .scale(2.0)
        .add(&z1c.matmul(&grad12)?)?
        .scale(norm);
    Ok(CcaGradient {
        dz1,
        dz2,
        near_degenerate: stats.min_gap() < DEGENERATE_GAP,
    })
}

/// Graph node computing `-corr(Z1, Z2)` so that minimizing it maximizes the
/// correlation. Its backward pass uses [`correlation_gradient`].
#[derive(Clone, Debug)]
pub struct NegCorrelationLoss {
    pub r1: f64,
    pub top_k: usize,
}

impl NegCorrelationLoss {
    pub fn new(r1: f64, top_k: usize) -> Arc<Self> {
        Arc::new(Self { r1, top_k })
    }
}

impl CustomOp for NegCorrelationLoss {
    fn name(&self) -> &str {
        "neg_correlation"
    }

    fn forward(&self, inputs: &[&Matrix]) -> Result<Matrix> {
        let (corr, _) = correlation_objective(inputs[0], inputs[1], self.r1, self.top_k)?;
        Ok(Matrix::scalar(-corr))
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, upstream: &Matrix) -> Result<Vec<Matrix>> {
        let (z1c, z2c) = centered_pair(inputs[0], inputs[1])?;
        let stats = stats_of_centered(&z1c, &z2c, self.r1, self.top_k)?;
        let grad = gradient_of_centered(&stats, &z1c, &z2c)?;
        let s = -upstream[(0, 0)];
        Ok(vec![grad.dz1.scale(s), grad.dz2.scale(s)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_covariances_by_hand() {
        let z = Matrix::column_vector(&[1.0, -1.0]);
        let cov = covariance_matrices(&z, &z, 0.1).unwrap();
        assert!((cov.sigma11[(0, 0)] - 2.1).abs() < 1e-15);
        assert!((cov.sigma22[(0, 0)] - 2.1).abs() < 1e-15);
        assert!((cov.sigma12[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_view_has_no_cross_covariance() {
        let z1 = Matrix::from_fn(6, 2, |i, j| (i * i) as f64 - j as f64);
        let z2 = Matrix::filled(6, 3, 4.0);
        let cov = covariance_matrices(&z1, &z2, 1e-3).unwrap();
        assert_eq!(cov.sigma12, Matrix::zeros(2, 3));
        assert_eq!(cov.sigma22, Matrix::from_diag(&[1e-3; 3]));

        let z2 = Matrix::filled(6, 2, 4.0);
        let (corr, stats) = correlation_objective(&z1, &z2, 1e-3, 2).unwrap();
        assert_eq!(corr, 0.0);
        let g = correlation_gradient(&stats, &z1, &z2).unwrap();
        assert!(g.dz1.max_abs() < 1e-10);
    }

    #[test]
    fn covariance_errors() {
        let one = Matrix::zeros(1, 2);
        assert!(matches!(
            covariance_matrices(&one, &one, 0.1),
            Err(Error::TooFewSamples { .. })
        ));
        let a = Matrix::zeros(3, 2);
        let b = Matrix::zeros(4, 2);
        assert!(covariance_matrices(&a, &b, 0.1).is_err());
        let mut c = Matrix::zeros(3, 2);
        c[(0, 0)] = f64::INFINITY;
        assert!(matches!(covariance_matrices(&c, &a, 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn top_k_bounds() {
        let z = Matrix::from_fn(5, 2, |i, j| (i + j * i) as f64);
        assert!(correlation_objective(&z, &z, 1e-3, 0).is_err());
        assert!(correlation_objective(&z, &z, 1e-3, 3).is_err());
    }

    #[test]
    fn repeated_singular_values_are_flagged() {
        let z = Matrix::from_fn(10, 2, |i, j| if j == 0 { i as f64 } else { ((i * 7) % 5) as f64 });
        let (_, stats) = correlation_objective(&z, &z, 1e-6, 2).unwrap();
        // With identical views both canonical correlations are about 1.
        let g = correlation_gradient(&stats, &z, &z).unwrap();
        assert!(stats.min_gap() < 1e-5);
        assert_eq!(g.near_degenerate, stats.min_gap() < DEGENERATE_GAP);
    }
}
