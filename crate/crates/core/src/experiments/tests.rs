use super::*;
use crate::error::Error;
use crate::linalg::{norm_sq, Matrix};
use crate::train::{init, InitScheme, Optimizer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn rank2_is_deterministic_and_targets_ignore_nuisance_latents() {
    let a = gen_rank2(3, 40).unwrap();
    assert_eq!(a, gen_rank2(3, 40).unwrap());
    assert_ne!(a.x, gen_rank2(4, 40).unwrap().x);
    assert_eq!((a.x.shape(), a.y.shape(), a.latent.shape()), ((20, 40), (20, 40), (8, 40)));

    let h = init(&[2, RANK2_HIDDEN, RANK2_DIM], 0.0, InitScheme::FanIn, a.h_seed).unwrap();
    let mut z = a.latent.clone();
    for i in 2..8 {
        z.row_mut(i).iter_mut().for_each(|v| *v = -3.0 * *v + 1.0);
    }
    let y = h.apply(&Matrix::from_rows(&[z.row(0), z.row(1)])).unwrap();
    assert_eq!(y, a.y);

    for i in 0..40 {
        for j in 0..i {
            let d: f64 = (0..20).map(|r| (a.x.get(r, i) - a.x.get(r, j)).powi(2)).sum();
            assert!(d > 0.0, "columns {i} and {j} coincide");
        }
    }
    assert!(a.linear_fit_rank <= 20);
    assert!(gen_rank2(0, 1).is_err());
}

#[test]
fn normalization_hits_the_requested_rms() {
    let d = gen_rank2(1, 64).unwrap().normalized(3.0, 0.3);
    let rms = |m: &Matrix| (m.frobenius_sq() / m.cols() as f64).sqrt();
    assert!((rms(&d.x) - 3.0).abs() < 1e-12);
    assert!((rms(&d.y) - 0.3).abs() < 1e-12);
}

#[test]
fn symmetry_task_invariants() {
    let t = gen_symmetry(5, 6, 7, 0.05, 0.05, 30).unwrap();
    assert!((norm_sq(&t.w) - 1.0).abs() < 1e-12);
    assert_eq!(t.targets.shape(), (7, 30));
    let m = t.target_matrix();
    for c in 0..30 {
        let v0 = t.v0_samples.col(c);
        let (_, path) = inner_gd(&v0, &m, 0.05, 7);
        for step in 1..=7 {
            assert_eq!(t.targets.get(step - 1, c), symmetry_loss(&path[step], &m));
        }
        let u = summary_stats(&v0, &t.w);
        assert!(u[0] >= 0.0 && u[1] >= 0.0);
        assert_eq!([t.summary.get(0, c), t.summary.get(1, c)], u);
    }
    assert_eq!(t, gen_symmetry(5, 6, 7, 0.05, 0.05, 30).unwrap());
}

#[test]
fn start_on_the_axis_stays_on_the_axis() {
    let t = gen_symmetry(2, 5, 6, 0.0, 0.05, 4).unwrap();
    let (targets, _) = t.evaluate(&Matrix::column(&t.w));
    let mut c: f64 = 1.0;
    let m = t.target_matrix();
    let (_, path) = inner_gd(&t.w, &m, 0.05, 6);
    for step in 0..6 {
        c -= 0.05 * 4.0 * (c * c * c - c);
        assert!((targets.get(step, 0) - (c * c - 1.0).powi(2)).abs() < 1e-14);
        assert!(summary_stats(&path[step + 1], &t.w)[1] < 1e-14);
    }
    let off = t.w.iter().map(|v| 1.3 * v).collect::<Vec<_>>();
    let (_, path) = inner_gd(&off, &m, 0.05, 6);
    for v in &path {
        assert!(summary_stats(v, &t.w)[1] < 1e-14);
    }
}

#[test]
fn noiseless_targets_are_invariant_under_maps_fixing_the_axis() {
    let t = gen_symmetry(9, 8, 10, 0.0, 0.05, 25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let maps = [
        random_reflection_fixing(&t.w, &mut rng),
        random_orthogonal_fixing(&t.w, &mut rng).unwrap(),
    ];
    for q in maps {
        assert!(q.t_matmul(&q).max_abs_diff(&Matrix::identity(8)) < 1e-12);
        let qw = q.mul_vec(&t.w);
        assert!(qw.iter().zip(&t.w).all(|(a, b)| (a - b).abs() < 1e-12));
        let (targets, summary) = t.evaluate(&q.matmul(&t.v0_samples));
        assert!(targets.max_abs_diff(&t.targets) <= 1e-10);
        assert!(summary.max_abs_diff(&t.summary) <= 1e-12);
    }
}

#[test]
fn orbit_map_moves_points_substantially() {
    let t = gen_symmetry(4, 20, 2, 0.0, 0.05, 50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut moved = 0.0;
    let mut spread = 0.0;
    for c in 0..50 {
        let v = t.v0_samples.col(c);
        let q = random_orthogonal_fixing(&t.w, &mut rng).unwrap();
        let qv = q.mul_vec(&v);
        moved += v.iter().zip(&qv).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        spread += 2.0 * summary_stats(&v, &t.w)[1];
    }
    // A uniform point of the orbit is nearly orthogonal to the start in w⊥.
    assert!((moved / spread - 1.0).abs() < 0.2, "{moved} vs {spread}");
}

#[test]
fn axis_statistic_follows_its_self_consistent_dynamics() {
    let eta = 1e-4;
    let t = gen_symmetry(6, 10, 1, 0.0, eta, 20).unwrap();
    let m = t.target_matrix();
    for c in 0..20 {
        let v = t.v0_samples.col(c);
        let (_, path) = inner_gd(&v, &m, eta, 1);
        let a0 = summary_stats(&v, &t.w)[0];
        let a1 = summary_stats(&path[1], &t.w)[0];
        let predicted = -8.0 * eta * (norm_sq(&v) - 1.0) * a0;
        assert!((a1 - a0 - predicted).abs() <= 100.0 * eta * eta * (1.0 + a0));
    }
}

#[test]
fn divergent_starts_are_redrawn() {
    let t = gen_symmetry(1, 10, 20, 0.0, 0.4, 40).unwrap();
    assert!(t.regenerated > 0);
    assert!(t.targets.as_slice().iter().all(|l| l.is_finite() && *l <= 1e6));
    assert!(matches!(gen_symmetry(0, 2, 5, 0.0, 0.05, 4), Err(Error::Input(_))));
    assert!(gen_symmetry(0, 5, 0, 0.0, 0.05, 4).is_err());
    assert!(gen_symmetry(0, 5, 5, -1.0, 0.05, 4).is_err());
}

#[test]
fn list_syntax() {
    assert_eq!(parse_list("3-6").unwrap(), vec![3, 4, 5, 6]);
    assert_eq!(parse_list("3, 5,8-9").unwrap(), vec![3, 5, 8, 9]);
    assert!(parse_list("").is_err());
    assert!(parse_list("6-3").is_err());
    assert!(parse_list("a").is_err());
}

#[test]
fn sweep_config_round_trip_and_rejections() {
    let c = SweepConfig::default();
    assert_eq!(SweepConfig::from_ini_str(&c.to_ini_string()).unwrap(), c);
    let text = "# desk run\n[data]\nseed = 4\n[train]\nsteps = 50\noptimizer = gd\n[sweep]\ndepths = 3-5\nseeds = 1,2\n";
    let c = SweepConfig::from_ini_str(text).unwrap();
    assert_eq!(c.data_seed, 4);
    assert_eq!(c.depths, vec![3, 4, 5]);
    assert_eq!(c.seeds, vec![1, 2]);
    assert_eq!(c.train.optimizer, Optimizer::Gd);
    assert_eq!(c.width, 40);
    for bad in [
        "[data]\nsed = 4\n",
        "[extra]\nx = 1\n",
        "x = 1\n",
        "[train]\nsteps = many\n",
        "[train]\nsteps = 0\n",
        "[sweep]\ndepths = 5-3\n",
    ] {
        let e = SweepConfig::from_ini_str(bad).unwrap_err();
        assert!(matches!(e, Error::Format { .. } | Error::Input(_)), "{bad}: {e}");
    }
}

#[test]
fn symmetry_config_round_trip() {
    let c = SymmetryConfig::default();
    assert_eq!(SymmetryConfig::from_ini_str(&c.to_ini_string()).unwrap(), c);
    let c = SymmetryConfig::from_ini_str("[sweep]\nlayer = 3\n[output]\ndir = /tmp/x\n").unwrap();
    assert_eq!(c.layer, Some(3));
    assert_eq!(c.out_dir, std::path::PathBuf::from("/tmp/x"));
    assert!(SymmetryConfig::from_ini_str("[sweep]\nlayer = 12\n").is_err());
}

#[test]
fn seed_override_from_environment() {
    std::env::set_var(SEED_ENV, "17");
    let a = SweepConfig::default().with_env().unwrap();
    let b = SymmetryConfig::default().with_env().unwrap();
    std::env::set_var(SEED_ENV, "x");
    let bad = SweepConfig::default().with_env();
    std::env::remove_var(SEED_ENV);
    assert_eq!(a.data_seed, 17);
    assert_eq!(b.seed, 17);
    assert!(bad.is_err());
}

#[test]
fn affine_fit_recovers_lines() {
    let pts: Vec<(f64, f64)> = (3..9).map(|l| (l as f64, 2.0 * l as f64 + 1.5)).collect();
    let (a, b, s) = affine_fit(&pts);
    assert!((a - 2.0).abs() < 1e-12 && (b - 1.5).abs() < 1e-12 && s < 1e-12);
}

fn record(depth: usize, seed: u64, norm2: f64, rank_mid: usize, fit: bool) -> SweepRecord {
    SweepRecord {
        depth,
        seed,
        norm2,
        mse: 0.0,
        relative_mse: 0.0,
        rank_mid,
        fit,
    }
}

#[test]
fn rank_fits_group_fitted_runs() {
    let records = vec![
        record(3, 0, 14.0, 3, true),
        record(4, 0, 17.0, 3, true),
        record(5, 0, 13.0, 2, true),
        record(6, 0, 15.0, 2, true),
        record(6, 1, 15.2, 2, true),
        record(7, 0, 1.0, 0, false),
    ];
    let fits = rank_fits(&records);
    assert_eq!(fits.len(), 2);
    assert_eq!(fits[0].rank, 2);
    assert_eq!(fits[0].depths, vec![5, 6]);
    assert_eq!(fits[0].n_runs, 3);
    assert!((fits[0].slope.unwrap() - 2.1).abs() < 1e-9);
    assert!((fits[0].max_excess - 3.2).abs() < 1e-9);
    assert!((fits[1].slope.unwrap() - 3.0).abs() < 1e-12);
    let single = rank_fits(&records[..1]);
    assert_eq!(single[0].slope, None);
}

fn tiny_sweep() -> SweepConfig {
    SweepConfig {
        n_samples: 24,
        width: 6,
        depths: vec![2, 3],
        seeds: vec![0, 1],
        train: crate::train::TrainConfig {
            steps: 150,
            log_every: 50,
            ..SweepConfig::default().train
        },
        ..SweepConfig::default()
    }
}

#[test]
fn tiny_sweep_outputs_and_determinism() {
    let cfg = tiny_sweep();
    let a = run_depth_sweep(&cfg).unwrap();
    assert_eq!(a.report.records.len(), 4);
    assert_eq!(a.runs.len(), 4);
    assert!(a.report.failures.is_empty());
    let order: Vec<(usize, u64)> = a.report.records.iter().map(|r| (r.depth, r.seed)).collect();
    assert_eq!(order, vec![(2, 0), (2, 1), (3, 0), (3, 1)]);

    let mut csv_a = Vec::new();
    a.report.write_csv(&mut csv_a).unwrap();
    let text = String::from_utf8(csv_a.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "depth,seed,norm2,rank_mid,fit");
    assert_eq!(text.lines().count(), 5);

    let b = run_depth_sweep(&cfg).unwrap();
    let mut csv_b = Vec::new();
    b.report.write_csv(&mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);
    let (mut sa, mut sb) = (Vec::new(), Vec::new());
    write_sweep_spectra(&a.runs, &mut sa).unwrap();
    write_sweep_spectra(&b.runs, &mut sb).unwrap();
    assert_eq!(sa, sb);
    assert!(String::from_utf8(sa).unwrap().starts_with("depth,seed,layer,kind,index,value\n"));

    let dir = tempfile::tempdir().unwrap();
    a.write_outputs(dir.path()).unwrap();
    for f in ["sweep.csv", "spectra.csv", "report.json", "config.ini", "nets/depth02_seed0.net"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let echoed = std::fs::read_to_string(dir.path().join("config.ini")).unwrap();
    assert_eq!(SweepConfig::from_ini_str(&echoed).unwrap(), cfg);
}

#[test]
fn huge_ridge_collapses_every_run() {
    let mut cfg = tiny_sweep();
    cfg.train.lambda = 10.0;
    cfg.train.optimizer = Optimizer::Gd;
    cfg.train.eta0 = 0.02;
    cfg.train.anneal_after = None;
    cfg.train.steps = 400;
    let out = run_depth_sweep(&cfg).unwrap();
    for r in &out.report.records {
        assert_eq!(r.rank_mid, 0);
        assert!(!r.fit);
        assert!(r.norm2 < 1e-3, "{}", r.norm2);
    }
    assert!(out.report.rank_monotone.iter().all(|(_, ok)| *ok));
    assert!(out.report.certificates.is_empty());
}

fn tiny_symmetry() -> SymmetryConfig {
    SymmetryConfig {
        dim: 5,
        horizon: 3,
        n_samples: 40,
        depth: 3,
        width: 8,
        orbit_pairs: 16,
        pca_paths: 2,
        train: crate::train::TrainConfig {
            steps: 100,
            log_every: 50,
            ..SymmetryConfig::default().train
        },
        ..SymmetryConfig::default()
    }
}

#[test]
fn tiny_symmetry_outputs_and_determinism() {
    let cfg = tiny_symmetry();
    let a = run_symmetry(&cfg).unwrap();
    let r = &a.report;
    assert_eq!(r.weight_ranks.len(), 3);
    assert_eq!(r.collapse_ratio.len(), 2);
    assert_eq!(r.control_ratio.len(), 2);
    assert!((1..3).contains(&r.layer));
    assert_eq!(a.pca.len(), 2 * 4);
    assert_eq!(a.orbits.len(), 32);
    assert!(a.orbits[..16].iter().all(|o| o.kind == "orbit" && o.summary_distance < 1e-9));
    assert!(r.cor5.is_some() || r.cor5_error.is_some());

    let b = run_symmetry(&cfg).unwrap();
    assert_eq!(a.report, b.report);
    let (mut pa, mut pb) = (Vec::new(), Vec::new());
    write_pca_csv(&a.pca, &mut pa).unwrap();
    write_pca_csv(&b.pca, &mut pb).unwrap();
    assert_eq!(pa, pb);
    assert!(String::from_utf8(pa).unwrap().starts_with("path,step,pc1,pc2\n"));
    let mut orb = Vec::new();
    write_orbit_csv(&a.orbits, &mut orb).unwrap();
    assert!(String::from_utf8(orb)
        .unwrap()
        .starts_with("kind,u1,u2,summary_distance,rep_distance\n"));

    let dir = tempfile::tempdir().unwrap();
    a.write_outputs(dir.path()).unwrap();
    for f in ["spectra.csv", "pca_paths.csv", "orbits.csv", "trace.csv", "report.json", "config.ini", "net.net"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let fixed = run_symmetry(&SymmetryConfig { layer: Some(2), ..cfg }).unwrap();
    assert_eq!(fixed.report.layer, 2);
}
