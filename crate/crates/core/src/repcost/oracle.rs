use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{pinv, singular_values, Matrix, DEFAULT_TOL};
use crate::train::orthogonal_matrix;

pub const GD_ORACLE_STEPS: usize = 60_000;
pub const GD_ORACLE_ETA: f64 = 0.1;
const PHASES: usize = 5;

/// Brute-force estimate of `min Σ‖W_ℓ‖²_F` subject to `W_L ⋯ W_1 = A` by gradient descent.
///
/// Minimises `‖W_L⋯W_1 − A‖²_F + λ Σ‖W_ℓ‖²_F` over five phases with `λ` divided by 10 each
/// phase, starting from partial isometries with hidden width `2·max(rows, cols)`. The problem
/// is solved for `A/s_1(A)` and rescaled by `s_1^{2/L}`. The first layer is finally corrected
/// so the product matches `A` exactly, and the norm of that feasible point is returned.
pub fn linear_repcost_gd_oracle(
    a: &Matrix,
    depth: usize,
    seed: u64,
    steps: usize,
    eta: f64,
) -> Result<f64> {
    super::check_depth(depth)?;
    if !(eta > 0.0) || steps < PHASES {
        return Err(Error::Input(format!(
            "oracle needs eta > 0 and at least {PHASES} steps"
        )));
    }
    let s = singular_values(a)?;
    let s1 = s.first().copied().unwrap_or(0.0);
    if s1 == 0.0 {
        return Ok(0.0);
    }
    let target = a.scale(1.0 / s1);
    let s_min = s
        .iter()
        .copied()
        .rfind(|&v| v > DEFAULT_TOL * s1)
        .unwrap_or(s1)
        / s1;

    let (m, n) = a.shape();
    let l = depth;
    let width = 2 * m.max(n);
    let mut dims = vec![n];
    dims.extend(std::iter::repeat_n(width, l - 1));
    dims.push(m);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws: Vec<Matrix> = (0..l)
        .map(|k| orthogonal_matrix(dims[k + 1], dims[k], &mut rng))
        .collect::<Result<_>>()?;

    let lambda0 = 0.1 * s_min.powf(2.0 - 2.0 / l as f64);
    let per_phase = steps / PHASES;
    let mut prefix: Vec<Matrix> = Vec::with_capacity(l + 1);
    for phase in 0..PHASES {
        let lambda = lambda0 * 10f64.powi(-(phase as i32));
        for _ in 0..per_phase {
            prefix.clear();
            prefix.push(Matrix::identity(n));
            for w in &ws {
                let next = w.matmul(prefix.last().unwrap());
                prefix.push(next);
            }
            let err = prefix[l].sub(&target);
            let mut back = Matrix::identity(m);
            for k in (0..l).rev() {
                let mut g = back.t_matmul(&err).matmul_t(&prefix[k]).scale(2.0);
                g.axpy(2.0 * lambda, &ws[k]);
                back = back.matmul(&ws[k]);
                ws[k].axpy(-eta, &g);
            }
        }
        if ws.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonConvergence(format!(
                "oracle diverged in phase {phase} (lambda {lambda:e}); reduce eta"
            )));
        }
    }

    let product = |ws: &[Matrix]| {
        ws.iter()
            .fold(Matrix::identity(n), |acc, w| w.matmul(&acc))
    };
    let p = product(&ws);
    let resid = p.sub(&target).frobenius() / target.frobenius();
    if resid > 1e-2 {
        return Err(Error::NonConvergence(format!(
            "oracle residual ‖P − A‖/‖A‖ = {resid:e} after {steps} steps"
        )));
    }
    if l == 1 {
        ws[0] = target.clone();
    } else {
        let upper = ws[1..]
            .iter()
            .fold(Matrix::identity(width), |acc, w| w.matmul(&acc));
        let fix = pinv(&upper, DEFAULT_TOL)?.matmul(&target.sub(&p));
        ws[0].axpy(1.0, &fix);
    }
    let feasible = product(&ws).sub(&target).frobenius();
    if feasible > 1e-8 {
        return Err(Error::NonConvergence(format!(
            "feasibility correction left residual {feasible:e} (pre-correction {resid:e})"
        )));
    }
    let norm: f64 = ws.iter().map(Matrix::frobenius_sq).sum();
    Ok(norm * s1.powf(2.0 / l as f64))
}
