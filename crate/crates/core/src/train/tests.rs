use super::*;
use crate::linalg::Matrix;
use crate::repcost::linear_repcost_exact;

fn toy_data(seed: u64, d_in: usize, d_out: usize, n: usize) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        gaussian_matrix(d_in, n, 1.0, &mut rng),
        gaussian_matrix(d_out, n, 1.0, &mut rng),
    )
}

#[test]
fn init_is_deterministic() {
    let a = init(&[3, 3], 0.0, InitScheme::FanIn, 5).unwrap();
    let b = init(&[3, 3], 0.0, InitScheme::FanIn, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, init(&[3, 3], 0.0, InitScheme::FanIn, 6).unwrap());
    assert!(init(&[3], 0.0, InitScheme::FanIn, 0).is_err());
    assert!(init(&[], 0.0, InitScheme::FanIn, 0).is_err());
}

#[test]
fn fan_in_variance() {
    let slope = 0.3;
    let widths = [50, 40, 30];
    for (k, w) in widths.windows(2).enumerate() {
        let target = 2.0 / (w[0] as f64 * (1.0 + slope * slope));
        let mut sum = 0.0;
        let mut count = 0.0;
        for seed in 0..10 {
            let p = init(&widths, slope, InitScheme::FanIn, seed).unwrap();
            for v in p.layers()[k].weight.as_slice() {
                sum += v * v;
                count += 1.0;
            }
        }
        let var = sum / count;
        assert!((var / target - 1.0).abs() < 0.2, "{var} vs {target}");
    }
}

#[test]
fn orthogonal_init() {
    let p = init(&[6, 6, 4, 8], 0.0, InitScheme::Orthogonal, 3).unwrap();
    let w = &p.layers()[0].weight;
    assert!(w.t_matmul(w).max_abs_diff(&Matrix::identity(6)) < 1e-9);
    let tall = &p.layers()[2].weight;
    assert!(tall.t_matmul(tall).max_abs_diff(&Matrix::identity(4)) < 1e-9);
    let wide = &p.layers()[1].weight;
    assert!(wide.matmul_t(wide).max_abs_diff(&Matrix::identity(4)) < 1e-9);
}

#[test]
fn config_validation() {
    let bad = [
        TrainConfig { steps: 0, ..Default::default() },
        TrainConfig { lambda: -1.0, ..Default::default() },
        TrainConfig { eta0: 0.0, ..Default::default() },
        TrainConfig { batch: Some(0), ..Default::default() },
        TrainConfig { log_every: 0, ..Default::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err());
    }
    let cfg = TrainConfig { eta0: 0.5, lr_depth_scaled: true, ..Default::default() };
    assert_eq!(cfg.learning_rate(5), 0.1);
}

#[test]
fn heavy_ridge_collapses_parameters() {
    let (x, mut y) = toy_data(1, 3, 2, 20);
    // Centred targets: otherwise the optimal output bias is mean(y)/(1+λ), not zero.
    for i in 0..2 {
        let mean = y.row(i).iter().sum::<f64>() / 20.0;
        y.row_mut(i).iter_mut().for_each(|v| *v -= mean);
    }
    let p0 = init(&[3, 8, 8, 2], 0.0, InitScheme::FanIn, 1).unwrap();
    let cfg = TrainConfig { lambda: 10.0, eta0: 0.01, steps: 2000, ..Default::default() };
    let (p, trace) = train(&p0, &x, &y, &cfg).unwrap();
    assert!(p.squared_norm() < 1e-3, "{}", p.squared_norm());
    assert_eq!(trace.last().unwrap().step, 2000);
}

#[test]
fn ridge_only_decay_is_geometric() {
    let (x, y) = toy_data(2, 3, 2, 10);
    let p0 = init(&[3, 5, 2], 0.2, InitScheme::FanIn, 2).unwrap();
    let cfg = TrainConfig {
        lambda: 0.1,
        eta0: 0.05,
        steps: 50,
        log_every: 1,
        data_weight: 0.0,
        ..Default::default()
    };
    let (_, trace) = train(&p0, &x, &y, &cfg).unwrap();
    let factor = (1.0 - 2.0 * 0.05 * 0.1f64).powi(2);
    for w in trace.records.windows(2) {
        assert!((w[1].norm2 - factor * w[0].norm2).abs() <= 1e-12 * w[0].norm2);
    }
}

#[test]
fn deep_linear_training_matches_closed_form() {
    // y = A x with A = diag(2, 0.5); the ridge-optimal product shrinks each singular value.
    let a = Matrix::from_diag(&[2.0, 0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gaussian_matrix(2, 200, 1.0, &mut rng);
    // Whiten the inputs so that the MSE equals ‖P − A‖²_F exactly.
    let cov = x.matmul_t(&x).scale(1.0 / 200.0);
    let e = crate::linalg::sym_eigen(&cov).unwrap();
    let mut inv_root = e.vectors.clone();
    inv_root.scale_cols(&e.values.iter().map(|v| 1.0 / v.sqrt()).collect::<Vec<_>>());
    let x = inv_root.matmul_t(&e.vectors).matmul(&x);
    let y = a.matmul(&x);

    let depth = 3;
    let lambda = 1e-3;
    let layers = (0..depth).map(|_| Matrix::identity(2).scale(0.9)).collect();
    let p0 = NetParams::deep_linear(layers).unwrap();
    let cfg = TrainConfig { lambda, eta0: 0.05, steps: 20_000, log_every: 1000, ..Default::default() };
    let (p, _) = train(&p0, &x, &y, &cfg).unwrap();

    // Per mode the balanced optimum solves min_σ (σ^L − s)² + λ L σ².
    let mut expected = 0.0;
    for s in [2.0f64, 0.5] {
        let mut sig: f64 = s.powf(1.0 / depth as f64);
        for _ in 0..200 {
            let f1 = 2.0 * (sig.powi(depth) - s) * depth as f64 * sig.powi(depth - 1)
                + 2.0 * lambda * depth as f64 * sig;
            let f2 = 2.0 * (depth as f64 * sig.powi(depth - 1)).powi(2)
                + 2.0 * (sig.powi(depth) - s) * (depth * (depth - 1)) as f64 * sig.powi(depth - 2)
                + 2.0 * lambda * depth as f64;
            sig -= f1 / f2;
        }
        expected += depth as f64 * sig * sig;
    }
    let got = p.squared_norm();
    assert!((got / expected - 1.0).abs() < 0.05, "{got} vs {expected}");
    let closed = linear_repcost_exact(&a, depth as usize).unwrap();
    assert!((got / closed - 1.0).abs() < 0.05);
}

#[test]
fn backtracking_gives_monotone_cost() {
    let (x, y) = toy_data(4, 3, 2, 30);
    let p0 = init(&[3, 10, 10, 2], 0.0, InitScheme::FanIn, 4).unwrap();
    let cfg = TrainConfig {
        lambda: 1e-3,
        eta0: 5.0,
        steps: 200,
        log_every: 1,
        backtracking: true,
        ..Default::default()
    };
    let (_, trace) = train(&p0, &x, &y, &cfg).unwrap();
    for w in trace.records.windows(2) {
        assert!(w[1].cost <= w[0].cost);
    }
}

#[test]
fn divergence_is_reported() {
    let (x, y) = toy_data(5, 3, 2, 10);
    let p0 = init(&[3, 10, 10, 2], 0.0, InitScheme::FanIn, 5).unwrap();
    let cfg = TrainConfig { eta0: 50.0, steps: 500, log_every: 1, ..Default::default() };
    match train(&p0, &x, &y, &cfg) {
        Err(Error::Diverged { trace, .. }) => {
            assert!(trace.records.iter().all(|r| r.cost.is_finite()));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let (x, y) = toy_data(6, 3, 2, 40);
    let p0 = init(&[3, 6, 2], 0.1, InitScheme::FanIn, 6).unwrap();
    let cfg = TrainConfig { steps: 100, batch: Some(8), log_every: 10, track_ntk: true, ..Default::default() };
    let a = train(&p0, &x, &y, &cfg).unwrap();
    let b = train(&p0, &x, &y, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert!(a.1.records.iter().all(|r| r.ntk_trace.is_some()));
}

#[test]
fn early_stop_on_fit_and_stationary_norm() {
    let (x, _) = toy_data(7, 2, 2, 20);
    let y = x.clone();
    let p0 = NetParams::deep_linear(vec![Matrix::identity(2); 2]).unwrap();
    let cfg = TrainConfig { lambda: 0.0, stop_cost: 1e-3, steps: 1000, log_every: 10, ..Default::default() };
    let (_, trace) = train(&p0, &x, &y, &cfg).unwrap();
    assert!(trace.stopped_early);
    assert_eq!(trace.last().unwrap().step, 10);
}

#[test]
fn trace_csv_header() {
    let (x, y) = toy_data(8, 2, 1, 5);
    let p0 = init(&[2, 3, 1], 0.0, InitScheme::FanIn, 8).unwrap();
    let cfg = TrainConfig { steps: 5, log_every: 2, ..Default::default() };
    let (_, trace) = train(&p0, &x, &y, &cfg).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,cost,norm2,balance,ntk_trace"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn sweep_matches_single_runs() {
    let (x, y) = toy_data(9, 3, 2, 16);
    let spec = SweepSpec { depths: vec![2, 3], seeds: vec![11], slope: 0.0, scheme: InitScheme::FanIn };
    let widths = |d: usize| {
        let mut w = vec![3];
        w.extend(std::iter::repeat_n(5, d - 1));
        w.push(2);
        w
    };
    let cfg = TrainConfig { steps: 50, ..Default::default() };
    let runs = train_sweep(&spec, widths, &x, &y, &cfg);
    assert_eq!(runs.iter().map(|r| r.depth).collect::<Vec<_>>(), vec![2, 3]);
    for run in &runs {
        let p0 = init(&widths(run.depth), 0.0, InitScheme::FanIn, 11).unwrap();
        let single = train(&p0, &x, &y, &TrainConfig { seed: 11, ..cfg.clone() }).unwrap();
        let got = run.result.as_ref().unwrap();
        assert_eq!(got.0, single.0);
        assert_eq!(got.1, single.1);
    }
}

#[test]
fn no_op_sweep_keeps_init_norm() {
    let (x, y) = toy_data(10, 3, 2, 16);
    let spec = SweepSpec { depths: vec![2, 4], seeds: vec![1, 2], slope: 0.0, scheme: InitScheme::FanIn };
    let widths = |d: usize| {
        let mut w = vec![3; d];
        w.push(2);
        w
    };
    let cfg = TrainConfig { lambda: 0.0, eta0: 1e-9, steps: 3, ..Default::default() };
    for run in train_sweep(&spec, widths, &x, &y, &cfg) {
        let p0 = init(&widths(run.depth), 0.0, InitScheme::FanIn, run.seed).unwrap();
        let (p, _) = run.result.unwrap();
        assert!((p.squared_norm() / p0.squared_norm() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn annealing_switches_the_decay_rate() {
    let (x, y) = toy_data(2, 3, 2, 10);
    let p0 = init(&[3, 5, 2], 0.2, InitScheme::FanIn, 2).unwrap();
    let cfg = TrainConfig {
        lambda: 0.1,
        eta0: 0.05,
        steps: 40,
        log_every: 1,
        data_weight: 0.0,
        anneal_after: Some(20),
        anneal_factor: 0.25,
        ..Default::default()
    };
    let (_, trace) = train(&p0, &x, &y, &cfg).unwrap();
    for w in trace.records.windows(2) {
        let eta = if w[0].step < 20 { 0.05 } else { 0.0125 };
        let factor = (1.0 - 2.0 * eta * 0.1f64).powi(2);
        assert!((w[1].norm2 - factor * w[0].norm2).abs() <= 1e-12 * w[0].norm2);
    }
}

/// Ridge regression with a penalised bias: `[W b] = Y X̃ᵀ (X̃ X̃ᵀ + Nλ I)⁻¹`, `X̃ = [X; 1ᵀ]`.
fn ridge_solution(x: &Matrix, y: &Matrix, lambda: f64) -> Matrix {
    let n = x.cols();
    let xt = Matrix::from_fn(x.rows() + 1, n, |i, j| if i < x.rows() { x.get(i, j) } else { 1.0 });
    let mut gram = xt.matmul_t(&xt);
    for i in 0..gram.rows() {
        gram.set(i, i, gram.get(i, i) + n as f64 * lambda);
    }
    y.matmul_t(&xt).matmul(&crate::linalg::pinv(&gram, 1e-14).unwrap())
}

#[test]
fn adam_reaches_the_ridge_optimum() {
    let (x, y) = toy_data(4, 3, 2, 30);
    let lambda = 0.05;
    let want = ridge_solution(&x, &y, lambda);
    let p0 = init(&[3, 2], 1.0, InitScheme::FanIn, 4).unwrap();
    let cfg = TrainConfig {
        lambda,
        eta0: 0.01,
        steps: 6000,
        optimizer: Optimizer::Adam,
        anneal_after: Some(4000),
        anneal_factor: 0.05,
        ..Default::default()
    };
    let (p, _) = train(&p0, &x, &y, &cfg).unwrap();
    let layer = p.layer(1);
    for i in 0..2 {
        for j in 0..3 {
            assert!((layer.weight.get(i, j) - want.get(i, j)).abs() < 1e-5);
        }
        assert!((layer.bias[i] - want.get(i, 3)).abs() < 1e-5);
    }
}

#[test]
fn adam_runs_are_deterministic_and_reject_backtracking() {
    let (x, y) = toy_data(5, 3, 2, 16);
    let p0 = init(&[3, 6, 2], 0.0, InitScheme::FanIn, 5).unwrap();
    let cfg = TrainConfig { steps: 60, optimizer: Optimizer::Adam, eta0: 1e-3, batch: Some(4), ..Default::default() };
    let a = train(&p0, &x, &y, &cfg).unwrap();
    let b = train(&p0, &x, &y, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert!(TrainConfig { backtracking: true, ..cfg.clone() }.validate().is_err());
    assert!(TrainConfig { anneal_factor: 0.0, ..cfg }.validate().is_err());
    assert_eq!("Adam".parse::<Optimizer>().unwrap(), Optimizer::Adam);
    assert!("lbfgs".parse::<Optimizer>().is_err());
}
