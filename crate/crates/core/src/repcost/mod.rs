//! Representation cost of linear maps at finite depth, its large-depth expansion, and explicit
//! parameter constructions with their norm accounting.

mod construct;
mod oracle;

pub use construct::{
    counterexample_network, counterexample_norm, cp_interpolation_network,
    optimal_linear_factorization,
};
pub use oracle::{linear_repcost_gd_oracle, GD_ORACLE_ETA, GD_ORACLE_STEPS};

use serde::Serialize;

use crate::error::{input, Result};
use crate::linalg::{log_pseudo_det, pseudo_log_gram, rank, schatten_pow, Matrix, DEFAULT_TOL};
use crate::net::NetParams;

fn check_depth(depth: usize) -> Result<()> {
    if depth == 0 {
        return input("depth must be at least 1");
    }
    Ok(())
}

/// `R(A; L) = L Σ s_i(A)^{2/L}`, the smallest `‖θ‖²` of a depth-`L` linear network computing `A`.
pub fn linear_repcost_exact(a: &Matrix, depth: usize) -> Result<f64> {
    check_depth(depth)?;
    Ok(depth as f64 * schatten_pow(a, 2.0 / depth as f64)?)
}

/// Exact cost and the terms of `L·Rank A + 2 log|A|₊ + ‖log₊ AᵀA‖² / (2L)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepCostBreakdown {
    pub depth: usize,
    pub exact: f64,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    /// `exact − (depth·r0 + r1 + r2/depth)`.
    pub residual: f64,
}

pub fn linear_repcost_expansion(a: &Matrix, depth: usize) -> Result<RepCostBreakdown> {
    let exact = linear_repcost_exact(a, depth)?;
    let r0 = rank(a, DEFAULT_TOL)? as f64;
    let r1 = 2.0 * log_pseudo_det(a, DEFAULT_TOL)?;
    let r2 = 0.5 * pseudo_log_gram(a, DEFAULT_TOL)?.1;
    let l = depth as f64;
    Ok(RepCostBreakdown {
        depth,
        exact,
        r0,
        r1,
        r2,
        residual: exact - (l * r0 + r1 + r2 / l),
    })
}

/// Per-layer squared norms and the excess `‖θ‖² − kL`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormAccount {
    /// `(‖W_ℓ‖²_F, ‖b_ℓ‖²)` for each layer.
    pub per_layer: Vec<(f64, f64)>,
    pub total: f64,
    pub k: usize,
    pub excess_over_kl: f64,
}

pub fn norm_account(params: &NetParams, k: usize) -> NormAccount {
    let per_layer = params.layer_norms();
    let total: f64 = per_layer.iter().map(|(w, b)| w + b).sum();
    NormAccount {
        excess_over_kl: total - (k * params.depth()) as f64,
        per_layer,
        total,
        k,
    }
}

#[cfg(test)]
mod tests;
