use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::SymmetryConfig;
use super::data::{gen_symmetry, inner_gd, random_orthogonal_fixing, summary_stats, SymmetryTask};
use super::depth_sweep::sweep_widths;
use crate::diagnostics::{cor5_certificate, layer_spectra, CertOptions, Certificate, SpectralReport};
use crate::error::{Error, Result};
use crate::linalg::{singular_values, svd, Matrix};
use crate::net::{forward, mse, save_params, NetParams};
use crate::train::{init, train, TrainConfig, TrainTrace};

pub const PCA_CSV_HEADER: [&str; 4] = ["path", "step", "pc1", "pc2"];
pub const ORBIT_CSV_HEADER: [&str; 5] = ["kind", "u1", "u2", "summary_distance", "rep_distance"];

/// Bottleneck rank of the symmetry task: the two summary statistics.
pub const SYMMETRY_RANK: usize = 2;
/// Batch size for the pre-activation rank certificate.
const CERT_BATCH: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub config: String,
    /// Starting points redrawn because inner GD diverged.
    pub regenerated: usize,
    pub input_scale: f64,
    pub target_scale: f64,
    pub mse: f64,
    pub relative_mse: f64,
    pub norm2: f64,
    pub fit: bool,
    /// Weight singular values above the threshold, per layer.
    pub weight_ranks: Vec<usize>,
    /// Number of layers with exactly two weight singular values above the threshold.
    pub layers_with_two: usize,
    /// Hidden layer used for the PCA and orbit analysis (1-based).
    pub layer: usize,
    /// `s₂/s₃` of the centred activations of every hidden layer.
    pub layer_scores: Vec<f64>,
    /// Median same-orbit distance over median random-pair distance, per hidden layer.
    pub collapse_ratio: Vec<f64>,
    /// The same ratio for the untrained initial network.
    pub control_ratio: Vec<f64>,
    pub cor5: Option<Certificate>,
    pub cor5_error: Option<String>,
}

impl SymmetryReport {
    pub fn selected_collapse_ratio(&self) -> f64 {
        self.collapse_ratio[self.layer - 1]
    }

    pub fn selected_control_ratio(&self) -> f64 {
        self.control_ratio[self.layer - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaPoint {
    pub path: usize,
    pub step: usize,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitPair {
    /// `orbit` for a point and its image under an orthogonal map fixing `w`, `random` otherwise.
    pub kind: &'static str,
    pub u1: f64,
    pub u2: f64,
    pub summary_distance: f64,
    pub rep_distance: f64,
}

pub struct SymmetryOutcome {
    pub report: SymmetryReport,
    pub task: SymmetryTask,
    pub initial: NetParams,
    pub params: NetParams,
    pub trace: TrainTrace,
    pub spectra: SpectralReport,
    pub pca: Vec<PcaPoint>,
    pub orbits: Vec<OrbitPair>,
}

fn rms_scale(m: &Matrix, target: f64) -> f64 {
    let ms = m.frobenius_sq() / m.cols().max(1) as f64;
    if ms > 0.0 {
        target / ms.sqrt()
    } else {
        1.0
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn col_distance(a: &Matrix, i: usize, b: &Matrix, j: usize) -> f64 {
    (0..a.rows())
        .map(|r| (a.get(r, i) - b.get(r, j)).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn centred(m: &Matrix) -> (Matrix, Vec<f64>) {
    let n = m.cols().max(1) as f64;
    let mean: Vec<f64> = (0..m.rows()).map(|i| m.row(i).iter().sum::<f64>() / n).collect();
    let c = Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) - mean[i]);
    (c, mean)
}

/// `s₂/s₃` of the centred activations; large when two directions dominate.
fn two_outlier_score(act: &Matrix) -> Result<f64> {
    let s = singular_values(&centred(act).0)?;
    let s2 = s.get(1).copied().unwrap_or(0.0);
    let s3 = s.get(2).copied().unwrap_or(0.0);
    Ok(if s3 > 0.0 { s2 / s3 } else if s2 > 0.0 { f64::MAX } else { 0.0 })
}

/// Same-orbit and random pairs of starting points, with the orbit partners as a matrix.
struct PairSample {
    orbit_base: Vec<usize>,
    orbit_partner: Matrix,
    random: Vec<(usize, usize)>,
}

fn sample_pairs(task: &SymmetryTask, n_pairs: usize, seed: u64) -> Result<PairSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = task.v0_samples.cols();
    let d = task.w.len();
    let orbit_base: Vec<usize> = (0..n_pairs).map(|i| i % n).collect();
    let mut orbit_partner = Matrix::zeros(d, n_pairs);
    for (c, &i) in orbit_base.iter().enumerate() {
        let q = random_orthogonal_fixing(&task.w, &mut rng)?;
        orbit_partner.set_col(c, &q.mul_vec(&task.v0_samples.col(i)));
    }
    let random = (0..n_pairs)
        .map(|c| {
            let i = c % n;
            let j = (i + rng.random_range(1..n)) % n;
            (i, j)
        })
        .collect();
    Ok(PairSample {
        orbit_base,
        orbit_partner,
        random,
    })
}

/// Per hidden layer, the median orbit distance over the median random-pair distance.
fn collapse_ratios(params: &NetParams, x: &Matrix, partner: &Matrix, pairs: &PairSample) -> Result<Vec<f64>> {
    let a = forward(params, x)?;
    let b = forward(params, partner)?;
    Ok((1..params.depth())
        .map(|ell| {
            let (pa, pb) = (a.act(ell), b.act(ell));
            let orbit = pairs
                .orbit_base
                .iter()
                .enumerate()
                .map(|(c, &i)| col_distance(pa, i, pb, c))
                .collect();
            let random = pairs
                .random
                .iter()
                .map(|&(i, j)| col_distance(pa, i, pa, j))
                .collect();
            let r = median(random);
            if r > 0.0 {
                median(orbit) / r
            } else {
                f64::NAN
            }
        })
        .collect())
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Trains on the symmetry task, then reports spectra, a 2-D PCA of inner-GD paths at the
/// bottleneck layer, orbit-collapse ratios and the pre-activation rank certificate.
pub fn run_symmetry(cfg: &SymmetryConfig) -> Result<SymmetryOutcome> {
    cfg.validate()?;
    let task = gen_symmetry(
        cfg.seed,
        cfg.dim,
        cfg.horizon,
        cfg.noise_scale,
        cfg.inner_eta,
        cfg.n_samples,
    )?;
    let sx = rms_scale(&task.v0_samples, cfg.x_norm);
    let sy = rms_scale(&task.targets, cfg.y_norm);
    let x = task.v0_samples.scale(sx);
    let y = task.targets.scale(sy);

    let widths = sweep_widths(cfg.dim, cfg.width, cfg.horizon, cfg.depth);
    let initial = init(&widths, 0.0, cfg.scheme, cfg.init_seed)?;
    let train_cfg = TrainConfig {
        seed: cfg.init_seed,
        ..cfg.train.clone()
    };
    let (params, trace) = train(&initial, &x, &y, &train_cfg)?;

    let err = mse(&params, &x, &y)?;
    let relative_mse = err / (y.frobenius_sq() / y.cols() as f64);
    let spectra = layer_spectra(&params, &x, cfg.rank_threshold)?;
    let weight_ranks = spectra.weight_ranks.clone();
    let layers_with_two = weight_ranks.iter().filter(|&&r| r == SYMMETRY_RANK).count();

    let cache = forward(&params, &x)?;
    let layer_scores = (1..cfg.depth)
        .map(|ell| two_outlier_score(cache.act(ell)))
        .collect::<Result<Vec<_>>>()?;
    let layer = match cfg.layer {
        Some(l) => l,
        None => {
            let mut best = 0;
            for (i, s) in layer_scores.iter().enumerate() {
                if *s > layer_scores[best] {
                    best = i;
                }
            }
            best + 1
        }
    };

    let pca = pca_paths(&params, &task, &cache, layer, sx, cfg.pca_paths)?;

    let pairs = sample_pairs(&task, cfg.orbit_pairs, cfg.seed ^ 0x0005_EED0_0B17)?;
    let partner = pairs.orbit_partner.scale(sx);
    let collapse_ratio = collapse_ratios(&params, &x, &partner, &pairs)?;
    let control_ratio = collapse_ratios(&initial, &x, &partner, &pairs)?;
    let orbits = orbit_rows(&params, &task, &x, &partner, &pairs, layer)?;

    let batch = x.leading_cols(x.cols().min(CERT_BATCH));
    let opts = CertOptions {
        p: 0.5,
        ..CertOptions::default()
    };
    let (cor5, cor5_error) = match cor5_certificate(&params, &batch, SYMMETRY_RANK, &opts) {
        Ok(c) => (Some(c), None),
        Err(Error::Precondition(m)) => (None, Some(m)),
        Err(e) => return Err(e),
    };

    let report = SymmetryReport {
        config: cfg.to_ini_string(),
        regenerated: task.regenerated,
        input_scale: sx,
        target_scale: sy,
        mse: err,
        relative_mse,
        norm2: params.squared_norm(),
        fit: relative_mse < cfg.fit_cut,
        weight_ranks,
        layers_with_two,
        layer,
        layer_scores,
        collapse_ratio,
        control_ratio,
        cor5,
        cor5_error,
    };
    Ok(SymmetryOutcome {
        report,
        task,
        initial,
        params,
        trace,
        spectra,
        pca,
        orbits,
    })
}

/// Projects inner-GD paths `v(0), ..., v(T)` of the first `n_paths` samples onto the top two
/// principal directions of the centred training activations at `layer`.
fn pca_paths(
    params: &NetParams,
    task: &SymmetryTask,
    cache: &crate::net::ForwardCache,
    layer: usize,
    sx: f64,
    n_paths: usize,
) -> Result<Vec<PcaPoint>> {
    let (c, mean) = centred(cache.act(layer));
    let dec = svd(&c)?;
    let m = task.target_matrix();
    let n_paths = n_paths.min(task.v0_samples.cols());
    let mut out = Vec::with_capacity(n_paths * (task.horizon_t + 1));
    for path in 0..n_paths {
        let (_, points) = inner_gd(&task.v0_samples.col(path), &m, task.inner_eta, task.horizon_t);
        let xs = Matrix::from_columns(&points).scale(sx);
        let acts = forward(params, &xs)?;
        let a = acts.act(layer);
        for step in 0..a.cols() {
            let mut pc = [0.0; 2];
            for (k, v) in pc.iter_mut().enumerate() {
                if k < dec.u.cols() {
                    *v = (0..a.rows()).map(|i| dec.u.get(i, k) * (a.get(i, step) - mean[i])).sum();
                }
            }
            out.push(PcaPoint {
                path,
                step,
                pc1: pc[0],
                pc2: pc[1],
            });
        }
    }
    Ok(out)
}

fn orbit_rows(
    params: &NetParams,
    task: &SymmetryTask,
    x: &Matrix,
    partner: &Matrix,
    pairs: &PairSample,
    layer: usize,
) -> Result<Vec<OrbitPair>> {
    let a = forward(params, x)?;
    let b = forward(params, partner)?;
    let (pa, pb) = (a.act(layer), b.act(layer));
    let u = |v: &[f64]| summary_stats(v, &task.w);
    let mut rows = Vec::with_capacity(2 * pairs.random.len());
    for (c, &i) in pairs.orbit_base.iter().enumerate() {
        let ua = u(&task.v0_samples.col(i));
        let ub = u(&pairs.orbit_partner.col(c));
        rows.push(OrbitPair {
            kind: "orbit",
            u1: ua[0],
            u2: ua[1],
            summary_distance: distance(ua, ub),
            rep_distance: col_distance(pa, i, pb, c),
        });
    }
    for &(i, j) in &pairs.random {
        let ua = u(&task.v0_samples.col(i));
        let ub = u(&task.v0_samples.col(j));
        rows.push(OrbitPair {
            kind: "random",
            u1: ua[0],
            u2: ua[1],
            summary_distance: distance(ua, ub),
            rep_distance: col_distance(pa, i, pa, j),
        });
    }
    Ok(rows)
}

pub fn write_pca_csv<W: Write>(points: &[PcaPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PCA_CSV_HEADER)?;
    for p in points {
        w.write_record([
            p.path.to_string(),
            p.step.to_string(),
            p.pc1.to_string(),
            p.pc2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_orbit_csv<W: Write>(rows: &[OrbitPair], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ORBIT_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.kind.to_string(),
            r.u1.to_string(),
            r.u2.to_string(),
            r.summary_distance.to_string(),
            r.rep_distance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl SymmetryOutcome {
    /// Writes `spectra.csv`, `pca_paths.csv`, `orbits.csv`, `trace.csv`, `report.json`,
    /// `config.ini` and `net.net`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.spectra
            .write_csv(std::fs::File::create(dir.join("spectra.csv"))?)?;
        write_pca_csv(&self.pca, std::fs::File::create(dir.join("pca_paths.csv"))?)?;
        write_orbit_csv(&self.orbits, std::fs::File::create(dir.join("orbits.csv"))?)?;
        self.trace.save_csv(dir.join("trace.csv"))?;
        let json = serde_json::to_string_pretty(&self.report)?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        std::fs::write(dir.join("config.ini"), &self.report.config)?;
        save_params(&self.params, dir.join("net.net"))?;
        Ok(())
    }
}
