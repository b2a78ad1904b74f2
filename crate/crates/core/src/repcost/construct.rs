use crate::error::{input, Error, Result};
use crate::linalg::{pinv, psd_sqrt, svd, Matrix, DEFAULT_TOL};
use crate::net::{forward, Layer, NetParams};

/// Balanced deep linear factorization `W_ℓ = U_ℓ S^{1/L} U_{ℓ-1}ᵀ` with `U_0 = V` and
/// `U_ℓ = U` for `ℓ >= 1`, where `A = U S Vᵀ`. Hidden layers have width `rows(A)`.
pub fn optimal_linear_factorization(a: &Matrix, depth: usize) -> Result<NetParams> {
    super::check_depth(depth)?;
    let d = svd(a)?;
    let cut = DEFAULT_TOL * d.s.first().copied().unwrap_or(0.0);
    let root: Vec<f64> = d
        .s
        .iter()
        .map(|&s| if s > cut { s.powf(1.0 / depth as f64) } else { 0.0 })
        .collect();
    let mut us = d.u.clone();
    us.scale_cols(&root);
    let first = us.matmul_t(&d.v);
    let inner = us.matmul_t(&d.u);
    let mut weights = Vec::with_capacity(depth);
    weights.push(first);
    for _ in 1..depth {
        weights.push(inner.clone());
    }
    NetParams::deep_linear(weights)
}

/// Depth-`L` network computing `x ↦ Ax` on nonnegative samples while every hidden
/// pre-activation stays nonnegative, so `σ_a` acts as the identity for any slope.
///
/// Hidden layer `ℓ` carries `B_ℓ x` with `B_ℓ` the PSD square root of
/// `(1 − ℓ/L) P_{Im Aᵀ} + (ℓ/L) AᵀA`; weights are `W_1 = B_1`, `W_ℓ = B_ℓ B_{ℓ-1}⁺` and
/// `W_L = A B_{L-1}⁺`.
pub fn cp_interpolation_network(
    a: &Matrix,
    depth: usize,
    samples: &Matrix,
    slope: f64,
) -> Result<NetParams> {
    super::check_depth(depth)?;
    if samples.rows() != a.cols() {
        return Err(Error::Dimension {
            op: "cp_interpolation_network",
            expected: format!("{} sample rows", a.cols()),
            got: samples.rows().to_string(),
        });
    }
    if samples.as_slice().iter().any(|&v| v < 0.0) {
        return Err(Error::Precondition("samples must lie in the nonnegative orthant".into()));
    }
    let image = a.matmul(samples);
    let img_tol = 1e-12 * image.max_abs().max(1.0);
    if image.as_slice().iter().any(|&v| v < -img_tol) {
        return Err(Error::Precondition("A must map the samples into the nonnegative orthant".into()));
    }

    let d = svd(a)?;
    let cut = DEFAULT_TOL * d.s.first().copied().unwrap_or(0.0);
    let r = d.s.iter().filter(|&&s| s > cut).count();
    let vr = d.v.leading_cols(r);
    let proj = vr.matmul_t(&vr);
    let gram = a.t_matmul(a);

    let l = depth as f64;
    let mut b_prev: Option<Matrix> = None;
    let mut layers = Vec::with_capacity(depth);
    for ell in 1..depth {
        let p = ell as f64 / l;
        let mut k = proj.scale(1.0 - p);
        k.axpy(p, &gram);
        let b = psd_sqrt(&k)?;
        let w = match &b_prev {
            None => b.clone(),
            Some(bp) => b.matmul(&pinv(bp, DEFAULT_TOL)?),
        };
        layers.push(Layer::linear(w));
        b_prev = Some(b);
    }
    let last = match &b_prev {
        None => a.clone(),
        Some(bp) => a.matmul(&pinv(bp, DEFAULT_TOL)?),
    };
    layers.push(Layer::linear(last));
    let params = NetParams::new(layers, slope)?;

    let cache = forward(&params, samples)?;
    for ell in 1..depth {
        let z = cache.preact(ell);
        let tol = 1e-12 * z.max_abs().max(1.0);
        if let Some(v) = z.as_slice().iter().copied().find(|&v| v < -tol) {
            return Err(Error::Construction(format!(
                "hidden layer {ell} has pre-activation {v:e} < 0"
            )));
        }
    }
    let err = cache.output().max_abs_diff(&image);
    if err > 1e-9 * image.max_abs().max(1.0) {
        return Err(Error::Construction(format!("output deviates from Ax by {err:e}")));
    }
    Ok(params)
}

fn diag3(a: f64, b: f64, c: f64) -> Matrix {
    Matrix::from_diag(&[a, b, c])
}

/// Even-depth ReLU network computing `f(x, y, z) = (x, y, z + c·σ(x − y))` on `ℝ₊³`, with
/// the first half of the layers expanding `x, y` by `e^ε` and shrinking `z` by `e^{-2ε}`, a
/// 4-unit middle layer producing `σ(x − y)`, and the second half undoing the scaling.
///
/// `branch` is the coefficient `c >= 0`; it enters the weights as `√c`.
pub fn counterexample_network(branch: f64, depth: usize, eps: f64) -> Result<NetParams> {
    if depth < 4 || !depth.is_multiple_of(2) {
        return input(format!("depth must be even and at least 4, got {depth}"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return input(format!("epsilon must be positive, got {eps}"));
    }
    if !(branch >= 0.0 && branch.is_finite()) {
        return input(format!("branch coefficient must be nonnegative, got {branch}"));
    }
    let half = depth / 2;
    let lm2 = (depth - 2) as f64;
    let root = branch.sqrt();
    let mut layers = Vec::with_capacity(depth);
    for _ in 1..half {
        layers.push(Layer::linear(diag3(eps.exp(), eps.exp(), (-2.0 * eps).exp())));
    }
    let g = root * (-lm2 * eps / 2.0).exp();
    layers.push(Layer::linear(Matrix::from_rows(&[
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [g, -g, 0.0],
    ])));
    let h = root * (-lm2 * eps).exp();
    layers.push(Layer::linear(Matrix::from_rows(&[
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, h],
    ])));
    for _ in (half + 2)..=depth {
        layers.push(Layer::linear(diag3((-eps).exp(), (-eps).exp(), (2.0 * eps).exp())));
    }
    NetParams::new(layers, 0.0)
}

/// Closed-form `‖θ‖²` of [`counterexample_network`], summed block by block.
pub fn counterexample_norm(branch: f64, depth: usize, eps: f64) -> f64 {
    let m = (depth / 2 - 1) as f64;
    let lm2 = (depth - 2) as f64;
    m * (2.0 * (2.0 * eps).exp() + (-4.0 * eps).exp())
        + (3.0 + 2.0 * branch * (-lm2 * eps).exp())
        + (3.0 + branch * (-2.0 * lm2 * eps).exp())
        + m * (2.0 * (-2.0 * eps).exp() + (4.0 * eps).exp())
}
