mod common;

use common::{householder, normal, uniform};
use dccdi::cca::{
    correlation_gradient, correlation_objective, covariance_matrices, linear_cca_oracle, train_dcca, DccaBlock,
    DccaShape,
};
use dccdi::fewshot::correlated_pair;
use dccdi::linalg::svd;
use dccdi::Matrix;
use proptest::prelude::*;

fn naive_cov(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.rows();
    let mean = |m: &Matrix, j: usize| (0..n).map(|i| m[(i, j)]).sum::<f64>() / n as f64;
    Matrix::from_fn(a.cols(), b.cols(), |p, q| {
        let (ma, mb) = (mean(a, p), mean(b, q));
        (0..n).map(|i| (a[(i, p)] - ma) * (b[(i, q)] - mb)).sum::<f64>() / (n - 1) as f64
    })
}

#[test]
fn covariances_match_double_loop() {
    let z1 = uniform(50, 4, 1);
    let z2 = uniform(50, 4, 2);
    let c = covariance_matrices(&z1, &z2, 0.01).unwrap();
    let ridge = Matrix::identity(4).scale(0.01);
    assert!(c.sigma11.max_abs_diff(&naive_cov(&z1, &z1).add(&ridge).unwrap()) < 1e-12);
    assert!(c.sigma22.max_abs_diff(&naive_cov(&z2, &z2).add(&ridge).unwrap()) < 1e-12);
    assert!(c.sigma12.max_abs_diff(&naive_cov(&z1, &z2)) < 1e-12);
}

#[test]
fn self_correlation_is_d() {
    let z = uniform(100, 2, 5);
    let (corr, _) = correlation_objective(&z, &z, 1e-6, 2).unwrap();
    assert!((corr - 2.0).abs() < 2e-3, "{corr}");
}

#[test]
fn pair_with_correlations_point_nine_and_half() {
    let (x, y) = correlated_pair(10_000, &[0.9, 0.5], 0).unwrap();
    let (corr, _) = correlation_objective(&x, &y, 1e-4, 2).unwrap();
    assert!((corr - 1.4).abs() < 0.02, "{corr}");
    let oracle = linear_cca_oracle(&x, &y, 2, 1e-4).unwrap();
    assert!((oracle.total() - corr).abs() < 1e-10);
}

#[test]
fn latent_plus_noise_leading_correlation() {
    for seed in [3, 4, 5] {
        let l = normal(10_000, 3, seed);
        let noise = normal(10_000, 3, seed + 1000);
        let e = normal(10_000, 3, seed + 2000);
        let x = l.add(&noise.scale(0.1)).unwrap();
        let y = l.scale(0.8).add(&e.scale(0.6)).unwrap();
        let cca = linear_cca_oracle(&x, &y, 1, 1e-6).unwrap();
        assert!((cca.correlations[0] - 0.8).abs() < 0.03, "seed {seed}: {:?}", cca.correlations);
    }
}

#[test]
fn oracle_equals_objective_on_raw_views() {
    for seed in 0..10 {
        let x = uniform(60, 4, seed);
        let y = x.matmul(&uniform(4, 4, seed + 50)).unwrap().add(&uniform(60, 4, seed + 99)).unwrap();
        for k in 1..=4 {
            let (corr, _) = correlation_objective(&x, &y, 1e-4, k).unwrap();
            let oracle = linear_cca_oracle(&x, &y, k, 1e-4).unwrap();
            assert!((corr - oracle.total()).abs() < 1e-10, "seed {seed} k {k}");
        }
    }
}

#[test]
fn full_k_is_trace_norm_of_t() {
    let x = uniform(40, 3, 7);
    let y = uniform(40, 3, 8).add(&x).unwrap();
    let (corr, stats) = correlation_objective(&x, &y, 1e-3, 3).unwrap();
    let tn: f64 = svd(&stats.t).unwrap().s.iter().sum();
    assert_eq!(corr, tn);
}

#[test]
fn gradient_vanishes_for_constant_view() {
    let z1 = uniform(20, 3, 1);
    let z2 = Matrix::filled(20, 3, 0.7);
    let (_, stats) = correlation_objective(&z1, &z2, 1e-3, 3).unwrap();
    let g = correlation_gradient(&stats, &z1, &z2).unwrap();
    assert!(g.dz1.max_abs() < 1e-10);
}

/// Fourth-order central difference of the objective in every entry of one view.
fn fd_gradient(z1: &Matrix, z2: &Matrix, r1: f64, k: usize, first: bool, h: f64) -> Matrix {
    let base = if first { z1 } else { z2 };
    let f = |idx: usize, delta: f64| {
        let mut m = base.clone();
        m.data_mut()[idx] += delta;
        let (a, b) = if first { (&m, z2) } else { (z1, &m) };
        correlation_objective(a, b, r1, k).unwrap().0
    };
    let mut out = Matrix::zeros(base.rows(), base.cols());
    for idx in 0..base.data().len() {
        out.data_mut()[idx] = (8.0 * (f(idx, h) - f(idx, -h)) - (f(idx, 2.0 * h) - f(idx, -2.0 * h))) / (12.0 * h);
    }
    out
}

fn two_point_fd(z1: &Matrix, z2: &Matrix, r1: f64, k: usize, h: f64) -> Matrix {
    let mut out = Matrix::zeros(z1.rows(), z1.cols());
    for idx in 0..z1.data().len() {
        let mut p = z1.clone();
        p.data_mut()[idx] += h;
        let mut m = z1.clone();
        m.data_mut()[idx] -= h;
        let fp = correlation_objective(&p, z2, r1, k).unwrap().0;
        let fm = correlation_objective(&m, z2, r1, k).unwrap().0;
        out.data_mut()[idx] = (fp - fm) / (2.0 * h);
    }
    out
}

fn worst_entry_rel(a: &Matrix, n: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(n.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

#[test]
fn gradient_matches_finite_differences_on_grid() {
    let mut worst: f64 = 0.0;
    for inst in 0..100u64 {
        let n = [20, 50][(inst % 2) as usize];
        let d = [2, 3, 5][(inst % 3) as usize];
        let r1 = [1e-4, 1e-3][((inst / 2) % 2) as usize];
        let z1 = uniform(n, d, inst);
        let z2 = z1.scale(0.5).add(&uniform(n, d, inst + 1000)).unwrap();
        let (_, stats) = correlation_objective(&z1, &z2, r1, d).unwrap();
        let g = correlation_gradient(&stats, &z1, &z2).unwrap();
        worst = worst.max(worst_entry_rel(&g.dz1, &fd_gradient(&z1, &z2, r1, d, true, 3e-4)));
        worst = worst.max(worst_entry_rel(&g.dz2, &fd_gradient(&z1, &z2, r1, d, false, 3e-4)));
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn gradient_two_point_check_and_rescaled_input() {
    let z1 = uniform(30, 3, 11);
    let z2 = z1.add(&uniform(30, 3, 12)).unwrap();
    for zz in [z1.clone(), z1.scale(2.0)] {
        let (_, stats) = correlation_objective(&zz, &z2, 1e-3, 3).unwrap();
        let g = correlation_gradient(&stats, &zz, &z2).unwrap();
        let fd = two_point_fd(&zz, &z2, 1e-3, 3, 1e-6);
        let rel = g.dz1.max_abs_diff(&fd) / g.dz1.max_abs();
        assert!(rel < 1e-5, "{rel}");
        assert!(worst_entry_rel(&g.dz1, &fd_gradient(&zz, &z2, 1e-3, 3, true, 3e-4)) < 1e-5);
    }
}

#[test]
fn gradient_with_truncated_k() {
    let z1 = uniform(40, 4, 21);
    let z2 = z1.add(&uniform(40, 4, 22).scale(0.8)).unwrap();
    let (_, stats) = correlation_objective(&z1, &z2, 1e-3, 2).unwrap();
    let g = correlation_gradient(&stats, &z1, &z2).unwrap();
    assert!(worst_entry_rel(&g.dz1, &fd_gradient(&z1, &z2, 1e-3, 2, true, 3e-4)) < 1e-5);
}

#[test]
fn dcca_linear_branches_reach_oracle() {
    let (x, y) = correlated_pair(1000, &[0.9, 0.5], 0).unwrap();
    let oracle = linear_cca_oracle(&x, &y, 2, 1e-4).unwrap().total();
    let shape = DccaShape {
        visual_in: 2,
        text_in: 2,
        hidden: vec![],
        output_dim: 2,
    };
    let block = DccaBlock::new(&shape, 1e-4, None, 0).unwrap();
    let trace = train_dcca(&block, &x, &y, 20, 0.001).unwrap();
    assert!(trace.correlations.windows(2).all(|w| w[1] >= w[0]));
    assert!((trace.correlations[20] - oracle).abs() < 1e-2);
}

#[test]
fn dcca_deep_branches_not_below_linear() {
    let (x, y) = correlated_pair(500, &[0.9, 0.5], 1).unwrap();
    let oracle = linear_cca_oracle(&x, &y, 2, 1e-4).unwrap().total();
    let shape = DccaShape {
        visual_in: 2,
        text_in: 2,
        hidden: vec![16],
        output_dim: 2,
    };
    let block = DccaBlock::new(&shape, 1e-4, None, 3).unwrap();
    let trace = train_dcca(&block, &x, &y, 20, 0.001).unwrap();
    assert!(trace.correlations[20] >= oracle - 0.05, "{} vs {oracle}", trace.correlations[20]);
}

fn view_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    views(3)
}

fn views(min_rows: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
    (min_rows..min_rows + 10, 1usize..4).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(-3.0f64..3.0, n * d),
            prop::collection::vec(-3.0f64..3.0, n * d),
        )
            .prop_map(move |(a, b)| (Matrix::new(n, d, a).unwrap(), Matrix::new(n, d, b).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_in_views((z1, z2) in view_pair()) {
        let d = z1.cols();
        let a = correlation_objective(&z1, &z2, 1e-3, d).unwrap().0;
        let b = correlation_objective(&z2, &z1, 1e-3, d).unwrap().0;
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn shift_invariant((z1, z2) in view_pair(), shift in prop::collection::vec(-50.0f64..50.0, 3)) {
        let d = z1.cols();
        let moved = Matrix::from_fn(z1.rows(), d, |i, j| z1[(i, j)] + shift[j]);
        let a = correlation_objective(&z1, &z2, 1e-3, d).unwrap().0;
        let b = correlation_objective(&moved, &z2, 1e-3, d).unwrap().0;
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn rotation_invariant((z1, z2) in views(12), v in prop::collection::vec(0.1f64..1.0, 3)) {
        let d = z1.cols();
        let q = householder(&v[..d]);
        let a = correlation_objective(&z1, &z2, 1e-8, d).unwrap().0;
        let b = correlation_objective(&z1.matmul(&q).unwrap(), &z2, 1e-8, d).unwrap().0;
        prop_assert!((a - b).abs() < 1e-9, "{a} {b}");
    }

    #[test]
    fn bounded_by_dimension((z1, z2) in view_pair()) {
        let d = z1.cols();
        let (corr, stats) = correlation_objective(&z1, &z2, 1e-6, d).unwrap();
        prop_assert!(corr >= 0.0 && corr <= d as f64 + 1e-6);
        prop_assert!(stats.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }
}
