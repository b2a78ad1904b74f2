use super::*;
use crate::linalg::{Matrix, DEFAULT_TOL};
use crate::net::{balancedness_residual, jacobian};

fn product(params: &NetParams) -> Matrix {
    params
        .layers()
        .iter()
        .fold(Matrix::identity(params.d_in()), |acc, l| l.weight.matmul(&acc))
}

#[test]
fn exact_cost_examples() {
    for l in [1, 3, 7] {
        let v = linear_repcost_exact(&Matrix::identity(3), l).unwrap();
        assert!((v - 3.0 * l as f64).abs() < 1e-12);
    }
    let v = linear_repcost_exact(&Matrix::from_diag(&[2.0, 0.5]), 4).unwrap();
    assert!((v - 4.0 * (2f64.sqrt() + 0.5f64.sqrt())).abs() < 1e-12);
    assert!((v - 8.48528).abs() < 1e-5);
    let v = linear_repcost_exact(&Matrix::from_diag(&[2.0]), 10).unwrap();
    assert!((v - 11.48698).abs() < 1e-5);
    assert!(linear_repcost_exact(&Matrix::identity(2), 0).is_err());
}

#[test]
fn cost_per_layer_decreases_to_rank() {
    let a = Matrix::from_rows(&[[3.0, 1.0, 0.0], [0.5, 0.2, 0.0], [1.0, 1.0, 0.0]]);
    let r = crate::linalg::rank(&a, DEFAULT_TOL).unwrap() as f64;
    let mut prev = f64::INFINITY;
    for p in 0..=8 {
        let l = 1usize << p;
        let v = linear_repcost_exact(&a, l).unwrap() / l as f64;
        assert!(v <= prev + 1e-12);
        prev = v;
    }
    assert!((prev - r).abs() < 0.1);
}

#[test]
fn expansion_examples() {
    let b = linear_repcost_expansion(&Matrix::identity(3), 5).unwrap();
    assert_eq!((b.r0, b.depth), (3.0, 5));
    assert!(b.r1.abs() < 1e-14 && b.r2.abs() < 1e-14 && b.residual.abs() < 1e-12);

    let b = linear_repcost_expansion(&Matrix::from_diag(&[2.0]), 10).unwrap();
    let ln2 = 2f64.ln();
    assert_eq!(b.r0, 1.0);
    assert!((b.r1 - 2.0 * ln2).abs() < 1e-14);
    assert!((b.r2 - 0.5 * (2.0 * ln2).powi(2)).abs() < 1e-14);
    assert!((b.r1 - 1.386294).abs() < 1e-6 && (b.r2 - 0.960906).abs() < 1e-6);
    let approx = 10.0 + b.r1 + b.r2 / 10.0;
    assert!((approx - 11.482384).abs() < 1e-6);
    assert!((b.residual - (10.0 * 2f64.powf(0.2) - approx)).abs() < 1e-12);
    assert!((b.residual - 0.004598).abs() < 1e-6);
}

#[test]
fn expansion_residual_is_second_order() {
    let a = Matrix::from_diag(&[2.0, 0.5]);
    let scaled: Vec<f64> = [8usize, 16, 32, 64]
        .iter()
        .map(|&l| linear_repcost_expansion(&a, l).unwrap().residual.abs() * (l * l) as f64)
        .collect();
    for v in &scaled {
        assert!(*v <= 2.0 * scaled[0]);
    }
}

#[test]
fn gd_oracle_examples() {
    let run = |a: &Matrix, l| linear_repcost_gd_oracle(a, l, 7, GD_ORACLE_STEPS, GD_ORACLE_ETA).unwrap();
    assert!((run(&Matrix::identity(2), 3) - 6.0).abs() <= 0.06);
    assert!((run(&Matrix::from_diag(&[2.0, 0.5]), 4) - 8.485).abs() <= 0.085);
    let u = [0.6, 0.8];
    let v = [0.0, 1.0, 0.0];
    let a = Matrix::from_fn(2, 3, |i, j| u[i] * v[j]);
    assert!((run(&a, 2) - 2.0).abs() <= 0.02);
    assert_eq!(run(&Matrix::zeros(2, 2), 3), 0.0);
}

#[test]
fn gd_oracle_reports_failure() {
    let e = linear_repcost_gd_oracle(&Matrix::from_diag(&[1.0, 0.5]), 3, 1, 10, 50.0);
    assert!(matches!(e, Err(crate::Error::NonConvergence(_))), "{e:?}");
}

#[test]
fn factorization_examples() {
    let net = optimal_linear_factorization(&Matrix::identity(3), 5).unwrap();
    for l in net.layers() {
        assert!(l.weight.t_matmul(&l.weight).max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }
    assert!((net.squared_norm() - 15.0).abs() < 1e-12);

    let net = optimal_linear_factorization(&Matrix::from_diag(&[4.0]), 2).unwrap();
    assert!((net.layer(1).weight.get(0, 0) - 2.0).abs() < 1e-14);
    assert!((net.layer(2).weight.get(0, 0) - 2.0).abs() < 1e-14);
    assert!((net.squared_norm() - 8.0).abs() < 1e-12);

    let a = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.3, 0.0, 2.0]]);
    for l in 1..6 {
        let net = optimal_linear_factorization(&a, l).unwrap();
        assert!(product(&net).sub(&a).frobenius() <= 1e-10 * a.frobenius());
        let exact = linear_repcost_exact(&a, l).unwrap();
        assert!((net.squared_norm() - exact).abs() <= 1e-10 * exact);
        assert!(balancedness_residual(&net) <= 1e-10);
    }
}

#[test]
fn norm_account_examples() {
    let zero = NetParams::new(vec![crate::net::Layer::zeros(2, 2); 3], 0.0).unwrap();
    let acc = norm_account(&zero, 2);
    assert_eq!((acc.total, acc.excess_over_kl), (0.0, -6.0));
    let net = optimal_linear_factorization(&Matrix::from_diag(&[2.0]), 2).unwrap();
    let acc = norm_account(&net, 1);
    assert!((acc.total - 4.0).abs() < 1e-12 && (acc.excess_over_kl - 2.0).abs() < 1e-12);
    assert_eq!(acc.per_layer.len(), 2);
}

fn grid(n: usize) -> Matrix {
    let mut cols = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let s = |t: usize| t as f64 / (n - 1) as f64;
                cols.push(vec![s(i), s(j), s(k)]);
            }
        }
    }
    Matrix::from_columns(&cols)
}

#[test]
fn counterexample_reproduces_target_function() {
    let check = |x: [f64; 3], want: [f64; 3]| {
        let net = counterexample_network(1.0, 8, 0.1).unwrap();
        let f = net.apply_vec(&x).unwrap();
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{f:?} vs {want:?}");
        }
    };
    check([0.2, 0.7, 0.1], [0.2, 0.7, 0.1]);
    check([0.7, 0.2, 0.1], [0.7, 0.2, 0.6]);

    let c = 0.6;
    let net = counterexample_network(c, 6, 0.05).unwrap();
    let f = net.apply_vec(&[0.5, 0.2, 0.3]).unwrap();
    assert!((f[2] - (0.3 + c * 0.3)).abs() < 1e-12);

    let pts = grid(7);
    let out = net.apply(&pts).unwrap();
    for col in 0..pts.cols() {
        let (x, y, z) = (pts.get(0, col), pts.get(1, col), pts.get(2, col));
        let want = [x, y, z + c * (x - y).max(0.0)];
        for r in 0..3 {
            assert!((out.get(r, col) - want[r]).abs() <= 1e-9);
        }
    }
}

#[test]
fn counterexample_jacobians_are_the_two_branches() {
    let net = counterexample_network(1.0, 10, 0.2).unwrap();
    let j_low = jacobian(&net, &[0.2, 0.7, 0.4]).unwrap();
    assert!(j_low.max_abs_diff(&Matrix::identity(3)) < 1e-12);
    let j_high = jacobian(&net, &[0.7, 0.2, 0.4]).unwrap();
    let want = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, -1.0, 1.0]]);
    assert!(j_high.max_abs_diff(&want) < 1e-12);
}

#[test]
fn counterexample_norm_closed_form() {
    for (l, eps, c) in [(8, 0.1, 1.0), (4, 0.3, 2.0), (20, 0.05, 0.5)] {
        let net = counterexample_network(c, l, eps).unwrap();
        let want = counterexample_norm(c, l, eps);
        assert!((norm_account(&net, 3).total - want).abs() < 1e-9);
        assert!((net.squared_norm() - want).abs() < 1e-9);
    }
    // Hand-expanded eps = 0.1, L = 8, unit branch.
    let e = |t: f64| t.exp();
    let hand = 3.0 * (2.0 * e(0.2) + e(-0.4)) + 3.0 + 2.0 * e(-0.6) + 3.0 + e(-1.2)
        + 3.0 * (2.0 * e(-0.2) + e(0.4));
    assert!((counterexample_norm(1.0, 8, 0.1) - hand).abs() < 1e-12);
}

#[test]
fn counterexample_rejects_bad_depth() {
    assert!(counterexample_network(1.0, 7, 0.1).is_err());
    assert!(counterexample_network(1.0, 2, 0.1).is_err());
    assert!(counterexample_network(1.0, 8, 0.0).is_err());
}

#[test]
fn cp_network_is_linear_on_samples() {
    let samples = grid(4);
    for (diag, slope) in [([1.0, 1.0], 0.0), ([4.0, 1.0], 0.3), ([2.0, 0.5], -0.5)] {
        let a = Matrix::from_fn(3, 3, |i, j| if i == j && i < 2 { diag[i] } else { 0.0 });
        for l in [1, 2, 5, 16] {
            let net = cp_interpolation_network(&a, l, &samples, slope).unwrap();
            let out = net.apply(&samples).unwrap();
            assert!(out.max_abs_diff(&a.matmul(&samples)) < 1e-9);
            let cache = crate::net::forward(&net, &samples).unwrap();
            for ell in 1..l {
                assert!(cache.preact(ell).as_slice().iter().all(|&v| v >= -1e-12));
            }
        }
    }
}

#[test]
fn cp_network_norm_gap_approaches_log_det() {
    let a = Matrix::from_diag(&[4.0, 1.0]);
    let samples = Matrix::from_rows(&[[0.0, 1.0, 0.5, 2.0], [1.0, 0.0, 0.5, 0.1]]);
    let target = 2.0 * 4f64.ln();
    let gaps: Vec<f64> = [8usize, 16, 32, 64, 128]
        .iter()
        .map(|&l| {
            let net = cp_interpolation_network(&a, l, &samples, 0.0).unwrap();
            net.squared_norm() - 2.0 * l as f64 - target
        })
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1].abs() < w[0].abs());
        // O(1/L): doubling depth roughly halves the gap.
        assert!((w[1] / w[0] - 0.5).abs() < 0.1, "{gaps:?}");
    }
}

#[test]
fn cp_network_rejects_negative_domains() {
    let a = Matrix::identity(2);
    let neg = Matrix::from_rows(&[[-1.0], [0.5]]);
    assert!(cp_interpolation_network(&a, 4, &neg, 0.0).is_err());
    let rot = Matrix::from_rows(&[[0.0, -1.0], [1.0, 0.0]]);
    let pos = Matrix::from_rows(&[[1.0], [1.0]]);
    assert!(cp_interpolation_network(&rot, 4, &pos, 0.0).is_err());
}
