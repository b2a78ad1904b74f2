use super::eigen::sym_eigen;
use super::matrix::Matrix;
use super::svd::{singular_values, svd};
use crate::error::{input, Result};

fn check_tol(tol: f64) -> Result<()> {
    if !(tol >= 0.0 && tol.is_finite()) {
        return input(format!("tolerance must be finite and nonnegative, got {tol}"));
    }
    Ok(())
}

/// Singular values strictly above `tol * s_1`.
fn nonzero(s: &[f64], tol: f64) -> impl Iterator<Item = f64> + '_ {
    let cut = tol * s.first().copied().unwrap_or(0.0);
    s.iter().copied().filter(move |&v| v > cut && v > 0.0)
}

/// Number of singular values above `tol * s_1`.
pub fn rank(a: &Matrix, tol: f64) -> Result<usize> {
    check_tol(tol)?;
    Ok(nonzero(&singular_values(a)?, tol).count())
}

/// Product of the nonzero singular values; `1` for a zero-rank matrix.
pub fn pseudo_det(a: &Matrix, tol: f64) -> Result<f64> {
    Ok(log_pseudo_det(a, tol)?.exp())
}

/// `log |A|₊`, computed as a sum of logs so that long products cannot overflow.
pub fn log_pseudo_det(a: &Matrix, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    Ok(nonzero(&singular_values(a)?, tol).map(f64::ln).sum())
}

/// Pseudo-logarithm of the Gram matrix, `log₊(AᵀA)`, and its squared Frobenius norm.
///
/// Nonzero eigenvalues `s_i²` of `AᵀA` are replaced by `2 log s_i`; the kernel stays zero.
pub fn pseudo_log_gram(a: &Matrix, tol: f64) -> Result<(Matrix, f64)> {
    check_tol(tol)?;
    let d = svd(a)?;
    let cut = tol * d.s.first().copied().unwrap_or(0.0);
    let logs: Vec<f64> = d
        .s
        .iter()
        .map(|&s| if s > cut && s > 0.0 { 2.0 * s.ln() } else { 0.0 })
        .collect();
    let mut vl = d.v.clone();
    vl.scale_cols(&logs);
    let out = vl.matmul_t(&d.v);
    let norm2 = logs.iter().map(|l| l * l).sum();
    Ok((out, norm2))
}

fn check_k(a: &Matrix, k: usize) -> Result<()> {
    let r = a.rows().min(a.cols());
    if k > r {
        return input(format!("k = {k} exceeds min(rows, cols) = {r}"));
    }
    Ok(())
}

/// `|A|_k`: product of the `k` largest singular values.
pub fn k_det(a: &Matrix, k: usize) -> Result<f64> {
    check_k(a, k)?;
    Ok(singular_values(a)?.iter().take(k).product())
}

/// `log |A|_k`; `-inf` when one of the top `k` singular values is zero.
pub fn log_k_det(a: &Matrix, k: usize) -> Result<f64> {
    check_k(a, k)?;
    Ok(singular_values(a)?.iter().take(k).map(|s| s.ln()).sum())
}

/// `Σ s_i^p` over strictly positive singular values.
pub fn schatten_pow(a: &Matrix, p: f64) -> Result<f64> {
    if !(p > 0.0 && p.is_finite()) {
        return input(format!("Schatten exponent must be positive, got {p}"));
    }
    Ok(singular_values(a)?
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|s| s.powf(p))
        .sum())
}

/// Count of singular values strictly above the absolute `threshold`.
pub fn numerical_rank(a: &Matrix, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0) {
        return input(format!("rank threshold must be positive, got {threshold}"));
    }
    Ok(singular_values(a)?.iter().filter(|&&s| s > threshold).count())
}

/// Top-`k` left and right singular vector blocks `(U_k, V_k)`; `U_k V_kᵀ` is the closest
/// rank-`k` partial isometry to `A`.
pub fn nearest_partial_isometry(a: &Matrix, k: usize) -> Result<(Matrix, Matrix)> {
    check_k(a, k)?;
    let d = svd(a)?;
    Ok((d.u.leading_cols(k), d.v.leading_cols(k)))
}

/// Moore-Penrose pseudo-inverse, dropping singular values at or below `tol * s_1`.
pub fn pinv(a: &Matrix, tol: f64) -> Result<Matrix> {
    check_tol(tol)?;
    let d = svd(a)?;
    let cut = tol * d.s.first().copied().unwrap_or(0.0);
    let inv: Vec<f64> = d
        .s
        .iter()
        .map(|&s| if s > cut && s > 0.0 { 1.0 / s } else { 0.0 })
        .collect();
    let mut vs = d.v.clone();
    vs.scale_cols(&inv);
    Ok(vs.matmul_t(&d.u))
}

/// Principal square root of a symmetric positive semidefinite matrix. Small negative
/// eigenvalues from rounding are clamped to zero.
pub fn psd_sqrt(a: &Matrix) -> Result<Matrix> {
    let e = sym_eigen(a)?;
    let scale = e.values.first().copied().unwrap_or(0.0).abs().max(1.0);
    if let Some(&low) = e.values.last() {
        if low < -1e-8 * scale {
            return input(format!("psd_sqrt: matrix has negative eigenvalue {low:e}"));
        }
    }
    let floor = f64::EPSILON * a.rows().max(1) as f64 * scale;
    let roots: Vec<f64> = e.values.iter().map(|&v| if v > floor { v.sqrt() } else { 0.0 }).collect();
    let mut qr = e.vectors.clone();
    qr.scale_cols(&roots);
    Ok(qr.matmul_t(&e.vectors))
}

/// Largest singular value.
pub fn op_norm(a: &Matrix) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

/// Sum of singular values.
pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    Ok(singular_values(a)?.iter().sum())
}
