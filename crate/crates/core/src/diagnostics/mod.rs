//! Runtime certificates for the bottleneck theorems, evaluated on concrete parameters, plus
//! per-layer spectra of weights and pre-activations.

mod certificates;

pub use certificates::{
    auto_k, cor5_bound, cor5_certificate, lip_curvature_gap, prop6_certificate, r1_certificate,
    r1_lower_bound, thm3_certificate, thm4_certificate,
};

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::linalg::{numerical_rank, singular_values, Matrix};
use crate::net::{forward, NetParams};

/// Relative Jacobian rank threshold (`s_i > tol · s_1`) used by certificate preconditions.
pub const JACOBIAN_RANK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertName {
    Thm3Weights,
    Thm4Activations,
    Cor5Sk1,
    Prop6Ntk,
    R1Lower,
    LipCurvature,
}

/// `PremiseFailed` means a hypothesis of the underlying inequality does not hold, so the
/// comparison carries no verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    PremiseFailed,
}

/// Constants and measurements a certificate was evaluated with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CertContext {
    pub k: Option<usize>,
    pub c1: Option<f64>,
    pub p: Option<f64>,
    pub c: Option<f64>,
    /// Batch columns the certificate looked at.
    pub points: Vec<usize>,
    pub rank_tol: f64,
    pub measured_rank: Option<usize>,
    /// Named auxiliary quantities (bounds, counts, alternative forms).
    pub values: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CertContext {
    fn value(&mut self, key: &str, v: f64) {
        self.values.insert(key.to_string(), v);
    }
}

/// A checked inequality `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: CertName,
    pub status: Status,
    pub pass: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub slack: f64,
    pub per_layer: Vec<f64>,
    pub context: CertContext,
}

impl Certificate {
    /// Passing tolerance on the slack, `1e-8 · max(1, |rhs|)`.
    pub fn tolerance(rhs: f64) -> f64 {
        1e-8 * rhs.abs().max(1.0)
    }

    fn build(
        name: CertName,
        lhs: f64,
        rhs: f64,
        per_layer: Vec<f64>,
        context: CertContext,
        premises_hold: bool,
    ) -> Result<Self> {
        let finite = lhs.is_finite()
            && rhs.is_finite()
            && per_layer.iter().all(|v| v.is_finite())
            && context.values.values().all(|v| v.is_finite())
            && context.c1.is_none_or(f64::is_finite)
            && context.c.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::Precondition(format!(
                "{name:?}: certificate quantities are not finite (lhs {lhs}, rhs {rhs})"
            )));
        }
        let slack = rhs - lhs;
        let status = if !premises_hold {
            Status::PremiseFailed
        } else if slack >= -Self::tolerance(rhs) {
            Status::Pass
        } else {
            Status::Fail
        };
        Ok(Self {
            name,
            status,
            pass: status == Status::Pass,
            lhs,
            rhs,
            slack,
            per_layer,
            context,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Writes certificates as a pretty-printed JSON array.
pub fn write_certificates<W: Write>(certs: &[Certificate], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, certs)?;
    writeln!(out)?;
    Ok(())
}

/// Knobs shared by the certificates.
#[derive(Debug, Clone, PartialEq)]
pub struct CertOptions {
    /// Fraction of layers allowed to violate the per-layer bounds, in `(0, 1)`.
    pub p: f64,
    /// NTK premise constant; `None` takes the measured `Tr Θ / L` (per point for batches).
    pub c: Option<f64>,
    /// Norm premise constant; `None` takes the measured `‖θ‖² − kL`.
    pub c1: Option<f64>,
    /// Maximal accepted balancedness residual; `None` skips the check.
    pub balance_tol: Option<f64>,
    pub rank_tol: f64,
}

impl Default for CertOptions {
    fn default() -> Self {
        Self {
            p: 0.5,
            c: None,
            c1: None,
            balance_tol: None,
            rank_tol: JACOBIAN_RANK_TOL,
        }
    }
}

impl CertOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return input(format!("p must lie in (0, 1), got {}", self.p));
        }
        if let Some(c) = self.c {
            if !(c >= 0.0 && c.is_finite()) {
                return input(format!("c must be finite and nonnegative, got {c}"));
            }
        }
        if let Some(c1) = self.c1 {
            if !c1.is_finite() {
                return input(format!("c1 must be finite, got {c1}"));
            }
        }
        if let Some(t) = self.balance_tol {
            if !(t >= 0.0) {
                return input(format!("balance tolerance must be nonnegative, got {t}"));
            }
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return input(format!("rank tolerance must lie in (0, 1), got {}", self.rank_tol));
        }
        Ok(())
    }
}

/// Singular values of every `W_ℓ` and of every `α̃_ℓ(X)/√N`, `ℓ = 1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub threshold: f64,
    pub n_points: usize,
    pub weight_singular_values: Vec<Vec<f64>>,
    /// Number of weight singular values above `threshold`, per layer.
    pub weight_ranks: Vec<usize>,
    pub preact_singular_values: Vec<Vec<f64>>,
}

impl SpectralReport {
    pub const CSV_HEADER: [&'static str; 4] = ["layer", "kind", "index", "value"];

    /// `s_{k+1}(α̃_ℓ(X)/√N)` per layer; zero where the spectrum has at most `k` entries.
    pub fn sk1(&self, k: usize) -> Vec<f64> {
        self.preact_singular_values
            .iter()
            .map(|s| s.get(k).copied().unwrap_or(0.0))
            .collect()
    }

    /// Number of pre-activation singular values above `threshold`, per layer.
    pub fn preact_ranks(&self) -> Vec<usize> {
        self.preact_singular_values
            .iter()
            .map(|s| s.iter().filter(|&&v| v > self.threshold).count())
            .collect()
    }

    /// Long-format CSV: one row per singular value, `kind` is `weight` or `preact`, layers
    /// and indices 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for (kind, spectra) in [
            ("weight", &self.weight_singular_values),
            ("preact", &self.preact_singular_values),
        ] {
            for (ell, s) in spectra.iter().enumerate() {
                for (i, v) in s.iter().enumerate() {
                    w.write_record([
                        (ell + 1).to_string(),
                        kind.to_string(),
                        (i + 1).to_string(),
                        format!("{v:e}"),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Spectra of all layers on the batch `x` (columns are points).
pub fn layer_spectra(params: &NetParams, x: &Matrix, threshold: f64) -> Result<SpectralReport> {
    if !(threshold > 0.0) {
        return input(format!("rank threshold must be positive, got {threshold}"));
    }
    let cache = forward(params, x)?;
    let n = x.cols();
    let scale = if n > 0 { 1.0 / (n as f64).sqrt() } else { 0.0 };
    let layers: Vec<usize> = (1..=params.depth()).collect();
    let per_layer: Vec<(Vec<f64>, usize, Vec<f64>)> = layers
        .par_iter()
        .map(|&ell| -> Result<_> {
            let w = &params.layer(ell).weight;
            let sw = singular_values(w)?;
            let rank = numerical_rank(w, threshold)?;
            let sp = singular_values(&cache.preact(ell).scale(scale))?;
            Ok((sw, rank, sp))
        })
        .collect::<Result<_>>()?;
    let mut report = SpectralReport {
        threshold,
        n_points: n,
        weight_singular_values: Vec::with_capacity(per_layer.len()),
        weight_ranks: Vec::with_capacity(per_layer.len()),
        preact_singular_values: Vec::with_capacity(per_layer.len()),
    };
    for (sw, rank, sp) in per_layer {
        report.weight_singular_values.push(sw);
        report.weight_ranks.push(rank);
        report.preact_singular_values.push(sp);
    }
    Ok(report)
}
