mod common;

use common::{householder, spd, uniform};
use dccdi::linalg::{center_rows, inv_sqrt_sym, svd, sym_eig};
use dccdi::Matrix;
use proptest::prelude::*;

fn to_na(m: &Matrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

#[test]
fn svd_matches_nalgebra_on_seed_42() {
    let a = uniform(5, 3, 42);
    let ours = svd(&a).unwrap();
    let mut theirs: Vec<f64> = to_na(&a).singular_values().iter().copied().collect();
    theirs.sort_by(|x, y| y.total_cmp(x));
    for (s, t) in ours.s.iter().zip(&theirs) {
        assert!((s - t).abs() < 1e-9, "{s} vs {t}");
    }
    let rel = ours.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
    assert!(rel < 1e-9);
    assert!(ours.u.t_matmul(&ours.u).unwrap().max_abs_diff(&Matrix::identity(3)) < 1e-10);
    assert!(ours.vt.matmul_t(&ours.vt).unwrap().max_abs_diff(&Matrix::identity(3)) < 1e-10);
}

#[test]
fn svd_rejects_nonfinite_and_empty() {
    assert!(svd(&Matrix::zeros(0, 3)).is_err());
    let mut a = Matrix::zeros(2, 2);
    a.data_mut()[1] = f64::INFINITY;
    assert!(svd(&a).is_err());
}

#[test]
fn sym_eig_reconstructs_seed_7() {
    let m = spd(4, 1.0, 7);
    let (vals, q) = sym_eig(&m).unwrap();
    assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    let scaled = Matrix::from_fn(4, 4, |i, j| q[(i, j)] * vals[j]);
    assert!(scaled.matmul_t(&q).unwrap().max_abs_diff(&m) < 1e-9);
    assert!(q.t_matmul(&q).unwrap().max_abs_diff(&Matrix::identity(4)) < 1e-10);
    let mut theirs: Vec<f64> = to_na(&m).symmetric_eigenvalues().iter().copied().collect();
    theirs.sort_by(|x, y| y.total_cmp(x));
    for (a, b) in vals.iter().zip(&theirs) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn sym_eig_rejects_asymmetric() {
    let m = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
    assert!(sym_eig(&m).is_err());
}

#[test]
fn inv_sqrt_identity_check_seed_11() {
    let m = spd(5, 1.0, 11);
    let r = inv_sqrt_sym(&m, 1e-10).unwrap();
    let rmr = r.matmul(&m).unwrap().matmul(&r).unwrap();
    assert!(rmr.sub(&Matrix::identity(5)).unwrap().frobenius_norm() < 1e-8);
    assert_eq!(r.max_asymmetry(), 0.0);
}

#[test]
fn center_rows_random_and_single_row() {
    let z = uniform(10, 4, 3);
    let c = center_rows(&z).unwrap();
    assert!(c.column_means().iter().all(|m| m.abs() < 1e-12));
    assert!(center_rows(&uniform(1, 4, 3)).is_err());
}

fn matrix_strategy(max_r: usize, max_c: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singular_values_transpose_invariant(a in matrix_strategy(7, 7)) {
        let s1 = svd(&a).unwrap().s;
        let s2 = svd(&a.transpose()).unwrap().s;
        let scale = s1[0].max(1.0);
        for (x, y) in s1.iter().zip(&s2) {
            prop_assert!((x - y).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn inv_sqrt_whitens_shifted_grams(n in 1usize..7, seed in any::<u64>(), which in 0usize..3) {
        let delta = [1e-3, 1.0, 10.0][which];
        let m = spd(n, delta, seed);
        let r = inv_sqrt_sym(&m, 1e-10).unwrap();
        let rmr = r.matmul(&m).unwrap().matmul(&r).unwrap();
        prop_assert!(rmr.max_abs_diff(&Matrix::identity(n)) < 1e-8);
    }

    #[test]
    fn centering_is_idempotent(z in matrix_strategy(9, 5).prop_filter("two rows", |m| m.rows() >= 2)) {
        let once = center_rows(&z).unwrap();
        prop_assert_eq!(center_rows(&once).unwrap(), once);
    }

    #[test]
    fn trace_norm_orthogonally_invariant(
        a in matrix_strategy(6, 6),
        u in prop::collection::vec(-1.0f64..1.0, 6),
        v in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        prop_assume!(u.iter().take(a.rows()).any(|x| x.abs() > 1e-3));
        prop_assume!(v.iter().take(a.cols()).any(|x| x.abs() > 1e-3));
        let left = householder(&u[..a.rows()]);
        let right = householder(&v[..a.cols()]);
        let b = left.matmul(&a).unwrap().matmul(&right).unwrap();
        let n1: f64 = svd(&a).unwrap().s.iter().sum();
        let n2: f64 = svd(&b).unwrap().s.iter().sum();
        prop_assert!((n1 - n2).abs() < 1e-9 * n1.max(1.0));
    }
}
