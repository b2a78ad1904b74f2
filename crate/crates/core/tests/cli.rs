use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bnlab::diagnostics::{Certificate, CertName, SpectralReport};
use bnlab::experiments::{ORBIT_CSV_HEADER, PCA_CSV_HEADER, SWEEP_CSV_HEADER, SWEEP_SPECTRA_CSV_HEADER};
use bnlab::net::load_params;
use bnlab::repcost::counterexample_network;
use bnlab::train::TrainTrace;

fn bnlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnlab"))
        .args(args)
        .env_remove("BNLAB_SEED")
        .output()
        .expect("spawn bnlab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

const TINY_SWEEP: &str = "\
# three short runs
[data]
seed = 3
n_samples = 24

[train]
steps = 30
anneal_after = 20
log_every = 10

[sweep]
width = 6
depths = 2-3
seeds = 0
";

const TINY_SYMMETRY: &str = "\
[data]
dim = 4
horizon = 3
n_samples = 32

[train]
steps = 20
anneal_after = 15
log_every = 10

[sweep]
depth = 4
width = 8
orbit_pairs = 6
pca_paths = 2
";

#[test]
fn repcost_prints_breakdown_json() {
    let o = bnlab(&["repcost", "--matrix", "diag:2,0.5", "--depth", "4"]);
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["exact"].as_f64().unwrap() - 8.48528).abs() < 1e-5);
    for key in ["depth", "r0", "r1", "r2", "residual"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn repcost_reads_matrix_files_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.txt");
    fs::write(&path, "# upper triangular\n1, 1\n0 1\n").unwrap();
    let from_file = bnlab(&["repcost", "--matrix", path.to_str().unwrap(), "--depth", "3"]);
    let from_rows = bnlab(&["repcost", "--matrix", "rows:1,1;0,1", "--depth", "3"]);
    assert!(from_file.status.success() && from_rows.status.success());
    assert_eq!(stdout(&from_file), stdout(&from_rows));
}

#[test]
fn bad_arguments_exit_with_status_two() {
    for args in [
        vec!["--no-such-flag"],
        vec!["repcost", "--matrix", "diag:2"],
        vec!["repcost", "--matrix", "diag:2,x", "--depth", "2"],
        vec!["repcost", "--matrix", "rows:1,2;3", "--depth", "2"],
        vec!["frobnicate"],
    ] {
        let o = bnlab(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("Usage") || String::from_utf8_lossy(&o.stderr).contains("usage"), "{args:?}");
    }
}

#[test]
fn unknown_config_keys_are_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[sweep]\nwidht = 4\n").unwrap();
    let o = bnlab(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("widht"));
}

#[test]
fn run_failures_exit_with_status_one() {
    let o = bnlab(&["diagnose", "--weights", "/nonexistent/net.net"]);
    assert_eq!(o.status.code(), Some(1));
    let o = bnlab(&["build", "counterexample", "--depth", "7", "--eps", "0.1", "--out", "/tmp/never.net"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn counterexample_has_zero_r1_bound() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("ce.net");
    let net = net.to_str().unwrap();
    let o = bnlab(&["build", "counterexample", "--depth", "8", "--eps", "0.1", "--out", net]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(load_params(net).unwrap(), counterexample_network(1.0, 8, 0.1).unwrap());

    let o = bnlab(&["diagnose", "--weights", net, "--op", "r1"]);
    assert!(o.status.success(), "{o:?}");
    let certs: Vec<Certificate> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(certs.len(), 1);
    assert_eq!(certs[0].name, CertName::R1Lower);
    assert!(certs[0].lhs.abs() < 1e-12, "{}", certs[0].lhs);
    assert!(certs[0].pass);
}

#[test]
fn diagnose_all_and_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("f.net");
    let net = net.to_str().unwrap();
    assert!(bnlab(&["build", "factorize", "--matrix", "diag:3,1,0.5", "--depth", "5", "--out", net]).status.success());
    let out = dir.path().join("certs.json");
    let o = bnlab(&["diagnose", "--weights", net, "--points", "4", "--strict", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let certs: Vec<Certificate> = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for name in [CertName::R1Lower, CertName::Thm3Weights, CertName::Thm4Activations, CertName::Cor5Sk1, CertName::Prop6Ntk] {
        assert!(certs.iter().any(|c| c.name == name), "missing {name:?}");
    }
    assert!(certs.iter().all(|c| c.pass), "{certs:#?}");

    let o = bnlab(&["diagnose", "--weights", net, "--op", "spectra", "--points", "4"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().next().unwrap(), SpectralReport::CSV_HEADER.join(","));
}

#[test]
fn build_cp_from_sample_file() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("s.csv");
    fs::write(&samples, "0.1,0.9\n0.5,0.5\n0.8,0.2\n").unwrap();
    let net = dir.path().join("cp.net");
    let o = bnlab(&[
        "build", "cp", "--matrix", "diag:4,1", "--depth", "6",
        "--samples", samples.to_str().unwrap(), "--out", net.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let p = load_params(&net).unwrap();
    assert_eq!(p.depth(), 6);
    let y = p.apply_vec(&[0.5, 0.5]).unwrap();
    assert!((y[0] - 2.0).abs() < 1e-9 && (y[1] - 0.5).abs() < 1e-9, "{y:?}");
}

#[test]
fn train_writes_weights_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let xs = dir.path().join("x.csv");
    let ys = dir.path().join("y.csv");
    fs::write(&xs, "1,0\n0,1\n1,1\n2,1\n").unwrap();
    fs::write(&ys, "1\n-1\n0\n1\n").unwrap();
    let out = dir.path().join("run");
    let o = bnlab(&[
        "--out-dir", out.to_str().unwrap(), "--seed", "5",
        "train", "--depth", "3", "--width", "5", "--steps", "50", "--optimizer", "gd", "--eta", "0.05",
        "--x", xs.to_str().unwrap(), "--y", ys.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let p = load_params(out.join("net.net")).unwrap();
    assert_eq!(p.widths(), vec![2, 5, 5, 1]);
    assert_eq!(header(&out.join("trace.csv")), TrainTrace::CSV_HEADER.join(","));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(summary["mse"].as_f64().unwrap().is_finite());

    let mismatched = bnlab(&["train", "--x", xs.to_str().unwrap()]);
    assert_eq!(mismatched.status.code(), Some(2));
}

#[test]
fn sweep_emits_fixed_headers_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fig1.cfg");
    fs::write(&cfg, TINY_SWEEP).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = bnlab(&["sweep", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{o:?}");
        (out, stdout(&o))
    };
    let (a, stdout_a) = run("a");
    let (b, _) = run("b");
    assert_eq!(stdout_a.lines().next().unwrap(), SWEEP_CSV_HEADER.join(","));
    assert_eq!(header(&a.join("sweep.csv")), SWEEP_CSV_HEADER.join(","));
    assert_eq!(header(&a.join("spectra.csv")), SWEEP_SPECTRA_CSV_HEADER.join(","));
    assert_eq!(fs::read(a.join("sweep.csv")).unwrap(), fs::read(b.join("sweep.csv")).unwrap());
    assert_eq!(fs::read(a.join("spectra.csv")).unwrap(), fs::read(b.join("spectra.csv")).unwrap());
    assert_eq!(fs::read_to_string(a.join("sweep.csv")).unwrap().lines().count(), 3);
    assert!(a.join("report.json").exists() && a.join("nets/depth02_seed0.net").exists());

    let reseeded = dir.path().join("c");
    let o = bnlab(&["sweep", "--config", cfg.to_str().unwrap(), "--out-dir", reseeded.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success());
    assert_ne!(fs::read(a.join("sweep.csv")).unwrap(), fs::read(reseeded.join("sweep.csv")).unwrap());
}

#[test]
fn seed_environment_variable_reaches_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fig1.cfg");
    fs::write(&cfg, TINY_SWEEP).unwrap();
    let run = |name: &str, env: Option<&str>| {
        let out = dir.path().join(name);
        let mut c = Command::new(env!("CARGO_BIN_EXE_bnlab"));
        c.args(["sweep", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
        match env {
            Some(v) => c.env("BNLAB_SEED", v),
            None => c.env_remove("BNLAB_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        fs::read(out.join("sweep.csv")).unwrap()
    };
    assert_eq!(run("cfg", None), run("env3", Some("3")));
    assert_ne!(run("cfg2", None), run("env4", Some("4")));
}

#[test]
fn symmetry_emits_fixed_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fig2.cfg");
    fs::write(&cfg, TINY_SYMMETRY).unwrap();
    let out = dir.path().join("sym");
    let o = bnlab(&["symmetry", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(header(&out.join("pca_paths.csv")), PCA_CSV_HEADER.join(","));
    assert_eq!(header(&out.join("orbits.csv")), ORBIT_CSV_HEADER.join(","));
    assert_eq!(header(&out.join("spectra.csv")), SpectralReport::CSV_HEADER.join(","));
    assert_eq!(header(&out.join("trace.csv")), TrainTrace::CSV_HEADER.join(","));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["weight_ranks"].as_array().unwrap().len(), 4);
}
