use super::matrix::{dot, Matrix};
use crate::error::{input, Result};

const MAX_SWEEPS: usize = 80;
const ROTATION_TOL: f64 = 1e-15;

/// Thin singular value decomposition `A = U diag(s) Vᵀ` with `r = min(rows, cols)` terms.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows x r`, orthonormal columns.
    pub u: Matrix,
    /// Descending, nonnegative.
    pub s: Vec<f64>,
    /// `cols x r`, orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        us.scale_cols(&self.s);
        us.matmul_t(&self.v)
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Column pairs are rotated until every pair is orthogonal to relative precision `1e-15`;
/// singular vectors belonging to zero singular values are completed to an orthonormal set.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return input("svd: matrix has non-finite entries");
    }
    let (m, n) = a.shape();
    if m >= n {
        let (u, s, v) = jacobi_tall(a.transpose(), m, n);
        Ok(Svd { u, s, v })
    } else {
        let (v, s, u) = jacobi_tall(a.clone(), n, m);
        Ok(Svd { u, s, v })
    }
}

/// Singular values only, descending.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(a)?.s)
}

/// Works on the `n` columns (length `m`, `m >= n`) of a matrix given by its transpose `g`
/// (so column `j` is the contiguous row `j` of `g`). Returns `(U, s, V)` with `U` `m x n`.
fn jacobi_tall(mut g: Matrix, m: usize, n: usize) -> (Matrix, Vec<f64>, Matrix) {
    debug_assert_eq!(g.shape(), (n, m));
    // Rows of `vt` are the columns of V.
    let mut vt = Matrix::identity(n);
    let mut norms: Vec<f64> = (0..n).map(|j| dot(g.row(j), g.row(j))).collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(g.row(p), g.row(q));
                if gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut g, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        // Refresh the cached norms to stop drift from the incremental updates.
        for (j, nj) in norms.iter_mut().enumerate() {
            *nj = dot(g.row(j), g.row(j));
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sv: Vec<f64> = norms.iter().map(|v| v.sqrt()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));

    let s: Vec<f64> = order.iter().map(|&j| sv[j]).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let cutoff = smax * f64::EPSILON * (m.max(n) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (idx, &j) in order.iter().enumerate() {
        if sv[j] > cutoff && sv[j] > 0.0 {
            u_cols.push(g.row(j).iter().map(|x| x / sv[j]).collect());
        } else {
            u_cols.push(Vec::new());
            missing.push(idx);
        }
    }
    complete_orthonormal(&mut u_cols, &missing, m);

    let u = Matrix::from_columns(&u_cols);
    let v = Matrix::from_fn(n, n, |i, k| vt.get(order[k], i));
    (u, s, v)
}

fn rotate_rows(g: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = g.cols();
    let data = g.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the empty slots listed in `missing` with unit vectors orthogonal to every other column,
/// drawing candidates from the standard basis.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], m: usize) {
    let mut basis = 0;
    for &slot in missing {
        loop {
            assert!(basis < m, "cannot complete orthonormal set");
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            // Two passes of Gram-Schmidt for stability.
            for _ in 0..2 {
                for c in cols.iter().filter(|c| !c.is_empty()) {
                    let proj = dot(&cand, c);
                    for (x, y) in cand.iter_mut().zip(c) {
                        *x -= proj * y;
                    }
                }
            }
            let nrm = dot(&cand, &cand).sqrt();
            if nrm > 1e-6 {
                cols[slot] = cand.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}
