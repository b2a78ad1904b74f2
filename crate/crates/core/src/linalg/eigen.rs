use super::matrix::Matrix;
use crate::error::{dim_err, input, Result};

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition `A = Q diag(values) Qᵀ` of a symmetric matrix, values descending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigen-solver. Only the symmetric part of `a` is used.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    if a.rows() != a.cols() {
        return dim_err("sym_eigen", "square matrix", format!("{}x{}", a.rows(), a.cols()));
    }
    if !a.is_finite() {
        return input("sym_eigen: matrix has non-finite entries");
    }
    let n = a.rows();
    let mut m = a.symmetrized();
    let mut q = Matrix::identity(n);
    let scale = m.frobenius();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = m.get(p, r);
                if apr.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m.get(r, r) - m.get(p, p)) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // m <- Jᵀ m J acting on rows/cols p, r.
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkr = m.get(k, r);
                    m.set(k, p, c * mkp - s * mkr);
                    m.set(k, r, s * mkp + c * mkr);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mrk = m.get(r, k);
                    m.set(p, k, c * mpk - s * mrk);
                    m.set(r, k, s * mpk + c * mrk);
                }
                for k in 0..n {
                    let qkp = q.get(k, p);
                    let qkr = q.get(k, r);
                    q.set(k, p, c * qkp - s * qkr);
                    q.set(k, r, s * qkp + c * qkr);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let vectors = q.select_cols(&order);
    Ok(SymEigen { values, vectors })
}
