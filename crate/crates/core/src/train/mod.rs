//! Gradient descent with weight decay, traces of the norm dynamics, and parallel depth sweeps.

mod init;

pub use init::{gaussian_matrix, init, orthogonal_matrix, InitScheme};

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, input, Error, Result};
use crate::linalg::Matrix;
use crate::net::{balancedness_residual, grad_weighted, ntk_trace, Gradient, NetParams};

/// Points used to estimate the mean NTK trace in traces.
const NTK_PROBE_POINTS: usize = 32;
/// Relative change in `‖θ‖²` between logs below which the norm counts as stationary.
const NORM_STATIONARY: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain (stochastic) gradient descent.
    Gd,
    /// Adam with `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8` on the same regularised objective.
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gd" | "sgd" => Ok(Self::Gd),
            "adam" => Ok(Self::Adam),
            other => input(format!("unknown optimizer {other:?}")),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Ridge coefficient `λ`.
    pub lambda: f64,
    pub eta0: f64,
    /// Use `η = eta0 / L` instead of `eta0`.
    pub lr_depth_scaled: bool,
    pub steps: usize,
    /// Minibatch size; `None` for full-batch GD.
    pub batch: Option<usize>,
    pub seed: u64,
    /// Early stop once the MSE is below this and the norm is stationary. `0` disables.
    pub stop_cost: f64,
    pub log_every: usize,
    /// Armijo backtracking on the full-batch objective.
    pub backtracking: bool,
    /// Record the mean NTK trace in each log entry.
    pub track_ntk: bool,
    /// Weight of the data term; `0` leaves pure weight decay.
    pub data_weight: f64,
    pub optimizer: Optimizer,
    /// From this step on the learning rate is multiplied by `anneal_factor`.
    pub anneal_after: Option<usize>,
    pub anneal_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            eta0: 0.05,
            lr_depth_scaled: false,
            steps: 1000,
            batch: None,
            seed: 0,
            stop_cost: 0.0,
            log_every: 100,
            backtracking: false,
            track_ntk: false,
            data_weight: 1.0,
            optimizer: Optimizer::Gd,
            anneal_after: None,
            anneal_factor: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return input("steps must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return input(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return input(format!("eta0 must be positive, got {}", self.eta0));
        }
        if self.log_every == 0 {
            return input("log_every must be at least 1");
        }
        if self.batch == Some(0) {
            return input("batch size must be positive");
        }
        if !(self.data_weight >= 0.0 && self.data_weight.is_finite()) {
            return input("data_weight must be nonnegative");
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor.is_finite()) {
            return input(format!("anneal_factor must be positive, got {}", self.anneal_factor));
        }
        if self.backtracking && self.optimizer != Optimizer::Gd {
            return input("backtracking is only available with gradient descent");
        }
        Ok(())
    }

    pub fn learning_rate(&self, depth: usize) -> f64 {
        if self.lr_depth_scaled {
            self.eta0 / depth as f64
        } else {
            self.eta0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    /// Full-batch objective `data_weight·MSE + λ‖θ‖²`.
    pub cost: f64,
    pub mse: f64,
    pub norm2: f64,
    pub balance: f64,
    pub ntk_trace: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub stopped_early: bool,
}

impl TrainTrace {
    pub const CSV_HEADER: [&'static str; 5] = ["step", "cost", "norm2", "balance", "ntk_trace"];

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            let ntk = r.ntk_trace.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                r.step.to_string(),
                r.cost.to_string(),
                r.norm2.to_string(),
                r.balance.to_string(),
                ntk,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn check_data(params: &NetParams, x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() != params.d_in() || y.rows() != params.d_out() || x.cols() != y.cols() {
        return dim_err(
            "train data",
            format!("{}xN inputs and {}xN targets", params.d_in(), params.d_out()),
            format!("{}x{} and {}x{}", x.rows(), x.cols(), y.rows(), y.cols()),
        );
    }
    if x.cols() == 0 {
        return input("training set is empty");
    }
    Ok(())
}

fn apply_step(params: &mut NetParams, g: &Gradient, eta: f64) {
    for (layer, gl) in params.layers_mut().iter_mut().zip(&g.layers) {
        layer.weight.axpy(-eta, &gl.weight);
        for (b, gb) in layer.bias.iter_mut().zip(&gl.bias) {
            *b -= eta * gb;
        }
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn new(params: &NetParams) -> Self {
        let n = params.num_params();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut NetParams, g: &Gradient, eta: f64) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let mut k = 0;
        for (layer, gl) in params.layers_mut().iter_mut().zip(&g.layers) {
            let pairs = layer
                .weight
                .as_mut_slice()
                .iter_mut()
                .zip(gl.weight.as_slice())
                .chain(layer.bias.iter_mut().zip(&gl.bias));
            for (w, &gw) in pairs {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gw;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gw * gw;
                *w -= eta * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                k += 1;
            }
        }
    }
}

fn objective(params: &NetParams, x: &Matrix, y: &Matrix, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let mse = crate::net::mse(params, x, y)?;
    Ok((cfg.data_weight * mse + cfg.lambda * params.squared_norm(), mse))
}

fn mean_ntk_trace(params: &NetParams, x: &Matrix) -> Result<f64> {
    let n = x.cols().min(NTK_PROBE_POINTS);
    let mut total = 0.0;
    for c in 0..n {
        total += ntk_trace(params, &x.col(c), true)?.total;
    }
    Ok(total / n as f64)
}

fn record(
    params: &NetParams,
    x: &Matrix,
    step: usize,
    cost: f64,
    mse: f64,
    cfg: &TrainConfig,
) -> Result<TraceRecord> {
    let ntk = if cfg.track_ntk {
        Some(mean_ntk_trace(params, x)?)
    } else {
        None
    };
    Ok(TraceRecord {
        step,
        cost,
        mse,
        norm2: params.squared_norm(),
        balance: balancedness_residual(params),
        ntk_trace: ntk,
    })
}

/// Minimises `data_weight · (1/N)Σ‖f(x_i) − y_i‖² + λ‖θ‖²` by GD (or SGD with `batch`).
///
/// Logs every `log_every` steps and at the end. A non-finite cost aborts with
/// [`Error::Diverged`] carrying the trace up to the last finite record.
pub fn train(
    params: &NetParams,
    x: &Matrix,
    y: &Matrix,
    cfg: &TrainConfig,
) -> Result<(NetParams, TrainTrace)> {
    cfg.validate()?;
    check_data(params, x, y)?;
    let mut p = params.clone();
    let mut trace = TrainTrace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = x.cols();
    let minibatch = cfg.batch.filter(|&b| b < n);
    let mut eta = cfg.learning_rate(p.depth());
    let eta_max = eta;
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| AdamState::new(&p));

    for step in 0..cfg.steps {
        if cfg.anneal_after == Some(step) {
            eta *= cfg.anneal_factor;
        }
        let full = if minibatch.is_none() || step % cfg.log_every == 0 || cfg.backtracking {
            Some(grad_weighted(&p, x, y, cfg.lambda, cfg.data_weight)?)
        } else {
            None
        };
        if let Some(lg) = &full {
            if !lg.cost.is_finite() {
                return Err(Error::Diverged { step, trace });
            }
            if step % cfg.log_every == 0 {
                let prev = trace.last().map(|r| r.norm2);
                trace.records.push(record(&p, x, step, lg.cost, lg.mse, cfg)?);
                if let Some(prev) = prev {
                    let norm2 = p.squared_norm();
                    let stationary = (norm2 - prev).abs() <= NORM_STATIONARY * norm2.max(1e-300);
                    if cfg.stop_cost > 0.0 && lg.mse < cfg.stop_cost && stationary {
                        trace.stopped_early = true;
                        return Ok((p, trace));
                    }
                }
            }
        }
        let g = match (minibatch, full) {
            (None, Some(lg)) => lg,
            (Some(b), _) => {
                let idx = sample(&mut rng, n, b).into_vec();
                let xb = x.select_cols(&idx);
                let yb = y.select_cols(&idx);
                grad_weighted(&p, &xb, &yb, cfg.lambda, cfg.data_weight)?
            }
            (None, None) => unreachable!("full batch gradient is always computed"),
        };

        if cfg.backtracking {
            let f0 = objective(&p, x, y, cfg)?.0;
            let g2 = g.grad.squared_norm();
            let mut t = (2.0 * eta).min(eta_max);
            let mut accepted = false;
            for _ in 0..50 {
                let mut trial = p.clone();
                apply_step(&mut trial, &g.grad, t);
                let f1 = objective(&trial, x, y, cfg)?.0;
                if f1.is_finite() && f1 <= f0 - 1e-4 * t * g2 {
                    p = trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                eta = t;
            }
        } else if let Some(state) = adam.as_mut() {
            state.step(&mut p, &g.grad, eta);
        } else {
            apply_step(&mut p, &g.grad, eta);
        }
        if !p.is_finite() {
            return Err(Error::Diverged { step, trace });
        }
    }
    let (cost, mse) = objective(&p, x, y, cfg)?;
    if !cost.is_finite() {
        return Err(Error::Diverged {
            step: cfg.steps,
            trace,
        });
    }
    trace.records.push(record(&p, x, cfg.steps, cost, mse, cfg)?);
    Ok((p, trace))
}

/// Depths, seeds and architecture shared by the runs of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub slope: f64,
    pub scheme: InitScheme,
}

#[derive(Debug)]
pub struct SweepRun {
    pub depth: usize,
    pub seed: u64,
    pub result: Result<(NetParams, TrainTrace)>,
}

/// Trains one network per `(depth, seed)` pair in parallel. Runs are independent: each is
/// initialised from its own seed, which also drives its minibatch sampling. Results come back
/// in depth-major input order; failures are recorded per run.
pub fn train_sweep<F>(
    spec: &SweepSpec,
    widths_for_depth: F,
    x: &Matrix,
    y: &Matrix,
    cfg: &TrainConfig,
) -> Vec<SweepRun>
where
    F: Fn(usize) -> Vec<usize> + Sync,
{
    let jobs: Vec<(usize, u64)> = spec
        .depths
        .iter()
        .flat_map(|&d| spec.seeds.iter().map(move |&s| (d, s)))
        .collect();
    jobs.par_iter()
        .map(|&(depth, seed)| {
            let result = init(&widths_for_depth(depth), spec.slope, spec.scheme, seed).and_then(|p| {
                let run_cfg = TrainConfig {
                    seed,
                    ..cfg.clone()
                };
                train(&p, x, y, &run_cfg)
            });
            SweepRun {
                depth,
                seed,
                result,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
