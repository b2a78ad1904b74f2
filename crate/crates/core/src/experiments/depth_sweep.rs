use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::SweepConfig;
use super::data::{gen_rank2, Rank2Dataset};
use crate::diagnostics::{
    cor5_certificate, layer_spectra, prop6_certificate, thm3_certificate, thm4_certificate,
    CertOptions, Certificate, SpectralReport, Status,
};
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, Matrix};
use crate::net::{mse, save_params, NetParams};
use crate::train::{train_sweep, SweepSpec, TrainTrace};

pub const SWEEP_CSV_HEADER: [&str; 5] = ["depth", "seed", "norm2", "rank_mid", "fit"];
pub const SWEEP_SPECTRA_CSV_HEADER: [&str; 6] = ["depth", "seed", "layer", "kind", "index", "value"];

/// Points at which the single-point certificates are evaluated for every fitted run.
const CERT_POINTS: usize = 4;
/// Batch size for the pre-activation rank certificate.
const CERT_BATCH: usize = 64;

/// Outcome of one `(depth, seed)` training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub depth: usize,
    pub seed: u64,
    pub norm2: f64,
    pub mse: f64,
    /// `MSE / mean‖y‖²`.
    pub relative_mse: f64,
    /// Singular values of `W_{⌈L/2⌉}` above the rank threshold.
    pub rank_mid: usize,
    pub fit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub depth: usize,
    pub seed: u64,
    pub error: String,
}

/// Least-squares line `‖θ‖² ≈ slope·L + intercept` over the fitted runs of one detected rank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankFit {
    pub rank: usize,
    pub depths: Vec<usize>,
    pub n_runs: usize,
    /// `None` when the runs cover fewer than two depths.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub residual_std: Option<f64>,
    pub mean_norm2: f64,
    /// `max(‖θ‖² − rank·L)` over the runs.
    pub max_excess: f64,
}

/// Certificates of one fitted run at `k = rank_mid`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunCertificates {
    pub depth: usize,
    pub seed: u64,
    pub k: usize,
    pub certificates: Vec<Certificate>,
    /// Certificates whose preconditions could not be evaluated.
    pub precondition_errors: Vec<String>,
}

impl RunCertificates {
    pub fn failures(&self) -> usize {
        self.certificates
            .iter()
            .filter(|c| c.status == Status::Fail)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub config: String,
    pub linear_fit_rank: usize,
    pub records: Vec<SweepRecord>,
    pub failures: Vec<RunFailure>,
    /// Per seed: whether the detected middle rank is non-increasing in depth.
    pub rank_monotone: Vec<(u64, bool)>,
    pub fits: Vec<RankFit>,
    pub certificates: Vec<RunCertificates>,
}

/// A trained network with its depth and seed.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub depth: usize,
    pub seed: u64,
    pub params: NetParams,
    pub trace: TrainTrace,
    pub spectra: SpectralReport,
}

pub struct SweepOutcome {
    pub report: SweepReport,
    pub dataset: Rank2Dataset,
    /// Completed runs in depth-major order.
    pub runs: Vec<TrainedRun>,
}

/// Layer widths `20, w, ..., w, 20` for depth `L`.
pub fn sweep_widths(d_in: usize, width: usize, d_out: usize, depth: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(depth + 1);
    w.push(d_in);
    w.extend(std::iter::repeat_n(width, depth.saturating_sub(1)));
    w.push(d_out);
    w
}

/// Trains the depth grid on the rank-2 task and evaluates ranks, norms, fits and certificates.
pub fn run_depth_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let dataset = gen_rank2(cfg.data_seed, cfg.n_samples)?.normalized(cfg.x_norm, cfg.y_norm);
    let (x, y) = (&dataset.x, &dataset.y);
    let y_power = y.frobenius_sq() / y.cols() as f64;
    let spec = SweepSpec {
        depths: cfg.depths.clone(),
        seeds: cfg.seeds.clone(),
        slope: 0.0,
        scheme: cfg.scheme,
    };
    let (d_in, d_out) = (x.rows(), y.rows());
    let runs = train_sweep(
        &spec,
        |depth| sweep_widths(d_in, cfg.width, d_out, depth),
        x,
        y,
        &cfg.train,
    );

    let mut failures = Vec::new();
    let mut trained = Vec::new();
    for run in runs {
        match run.result {
            Ok((params, trace)) => trained.push((run.depth, run.seed, params, trace)),
            Err(e) => failures.push(RunFailure {
                depth: run.depth,
                seed: run.seed,
                error: e.to_string(),
            }),
        }
    }

    let analysed: Vec<(SweepRecord, TrainedRun, Option<RunCertificates>)> = trained
        .into_par_iter()
        .map(|(depth, seed, params, trace)| -> Result<_> {
            let err = mse(&params, x, y)?;
            let relative_mse = err / y_power;
            let rank_mid = numerical_rank(&params.layer(depth.div_ceil(2)).weight, cfg.rank_threshold)?;
            let record = SweepRecord {
                depth,
                seed,
                norm2: params.squared_norm(),
                mse: err,
                relative_mse,
                rank_mid,
                fit: relative_mse < cfg.fit_cut,
            };
            let spectra = layer_spectra(&params, x, cfg.rank_threshold)?;
            let certs = if record.fit && rank_mid > 0 {
                Some(certify_run(&params, x, depth, seed, rank_mid)?)
            } else {
                None
            };
            let run = TrainedRun {
                depth,
                seed,
                params,
                trace,
                spectra,
            };
            Ok((record, run, certs))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(analysed.len());
    let mut runs = Vec::with_capacity(analysed.len());
    let mut certificates = Vec::new();
    for (record, run, certs) in analysed {
        records.push(record);
        runs.push(run);
        certificates.extend(certs);
    }
    let rank_monotone = cfg
        .seeds
        .iter()
        .map(|&s| (s, rank_non_increasing(&records, s)))
        .collect();
    let fits = rank_fits(&records);
    Ok(SweepOutcome {
        report: SweepReport {
            config: cfg.to_ini_string(),
            linear_fit_rank: dataset.linear_fit_rank,
            records,
            failures,
            rank_monotone,
            fits,
            certificates,
        },
        dataset,
        runs,
    })
}

/// Weight, activation, pre-activation-rank and second-derivative certificates at `k`.
/// Precondition errors are recorded rather than propagated.
pub fn certify_run(
    params: &NetParams,
    x: &Matrix,
    depth: usize,
    seed: u64,
    k: usize,
) -> Result<RunCertificates> {
    let opts = CertOptions::default();
    let mut out = RunCertificates {
        depth,
        seed,
        k,
        certificates: Vec::new(),
        precondition_errors: Vec::new(),
    };
    let keep = |r: Result<Certificate>, out: &mut RunCertificates| -> Result<()> {
        match r {
            Ok(c) => out.certificates.push(c),
            Err(Error::Precondition(m)) => out.precondition_errors.push(m),
            Err(e) => return Err(e),
        }
        Ok(())
    };
    for c in 0..x.cols().min(CERT_POINTS) {
        let point = x.col(c);
        keep(thm3_certificate(params, &point, k, &opts), &mut out)?;
        keep(thm4_certificate(params, &point, k, &opts), &mut out)?;
        keep(prop6_certificate(params, &point), &mut out)?;
    }
    let batch = x.leading_cols(x.cols().min(CERT_BATCH));
    keep(cor5_certificate(params, &batch, k, &opts), &mut out)?;
    Ok(out)
}

fn rank_non_increasing(records: &[SweepRecord], seed: u64) -> bool {
    let mut by_depth: Vec<(usize, usize)> = records
        .iter()
        .filter(|r| r.seed == seed)
        .map(|r| (r.depth, r.rank_mid))
        .collect();
    by_depth.sort_unstable();
    by_depth.windows(2).all(|w| w[1].1 <= w[0].1)
}

/// One affine fit per detected rank over the fitted runs, pooling seeds.
pub fn rank_fits(records: &[SweepRecord]) -> Vec<RankFit> {
    let mut ranks: Vec<usize> = records.iter().filter(|r| r.fit).map(|r| r.rank_mid).collect();
    ranks.sort_unstable();
    ranks.dedup();
    ranks
        .into_iter()
        .map(|rank| {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.fit && r.rank_mid == rank)
                .map(|r| (r.depth as f64, r.norm2))
                .collect();
            let mut depths: Vec<usize> = records
                .iter()
                .filter(|r| r.fit && r.rank_mid == rank)
                .map(|r| r.depth)
                .collect();
            depths.sort_unstable();
            depths.dedup();
            let mean_norm2 = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
            let max_excess = pts
                .iter()
                .map(|(l, n)| n - rank as f64 * l)
                .fold(f64::NEG_INFINITY, f64::max);
            let line = (depths.len() >= 2).then(|| affine_fit(&pts));
            RankFit {
                rank,
                depths,
                n_runs: pts.len(),
                slope: line.map(|l| l.0),
                intercept: line.map(|l| l.1),
                residual_std: line.map(|l| l.2),
                mean_norm2,
                max_excess,
            }
        })
        .collect()
}

/// Ordinary least squares `y ≈ a·x + b`; returns `(a, b, residual standard deviation)`.
pub fn affine_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let b = my - a * mx;
    let ss: f64 = pts.iter().map(|p| (p.1 - a * p.0 - b).powi(2)).sum();
    (a, b, (ss / n).sqrt())
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.depth.to_string(),
                r.seed.to_string(),
                r.norm2.to_string(),
                r.rank_mid.to_string(),
                u8::from(r.fit).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Long-format spectra of every run, `kind` is `weight` or `preact`.
pub fn write_sweep_spectra<W: Write>(runs: &[TrainedRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_SPECTRA_CSV_HEADER)?;
    for run in runs {
        for (kind, spectra) in [
            ("weight", &run.spectra.weight_singular_values),
            ("preact", &run.spectra.preact_singular_values),
        ] {
            for (ell, s) in spectra.iter().enumerate() {
                for (i, v) in s.iter().enumerate() {
                    w.write_record([
                        run.depth.to_string(),
                        run.seed.to_string(),
                        (ell + 1).to_string(),
                        kind.to_string(),
                        (i + 1).to_string(),
                        format!("{v:e}"),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

impl SweepOutcome {
    /// Writes `sweep.csv`, `spectra.csv`, `report.json`, `config.ini` and one weight file per run
    /// under `nets/`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("nets"))?;
        self.report.write_csv(std::fs::File::create(dir.join("sweep.csv"))?)?;
        write_sweep_spectra(&self.runs, std::fs::File::create(dir.join("spectra.csv"))?)?;
        let json = serde_json::to_string_pretty(&self.report)?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        std::fs::write(dir.join("config.ini"), &self.report.config)?;
        for run in &self.runs {
            let name = format!("depth{:02}_seed{}.net", run.depth, run.seed);
            save_params(&run.params, dir.join("nets").join(name))?;
        }
        Ok(())
    }
}
