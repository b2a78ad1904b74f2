use super::{forward, partial_jacobians, NetParams};
use crate::error::{dim_err, input, Error, Result};
use crate::linalg::{dot, norm_sq, Matrix};

/// Largest `N · d_out` accepted by [`ntk_gram`].
pub const NTK_GRAM_MAX: usize = 2000;

/// `Tr Θ(x, x)` and its per-layer summands.
#[derive(Debug, Clone, PartialEq)]
pub struct NtkTrace {
    pub total: f64,
    pub per_layer: Vec<f64>,
}

fn check_point(params: &NetParams, x: &[f64]) -> Result<()> {
    if x.len() != params.d_in() {
        return dim_err("ntk", params.d_in(), x.len());
    }
    Ok(())
}

/// NTK trace through the layer decomposition `Σ_ℓ ‖α_{ℓ-1}(x)‖² ‖J(α̃_ℓ → f)(x)‖²_F`, plus
/// `Σ_ℓ ‖J(α̃_ℓ → f)(x)‖²_F` for the bias parameters when `include_bias` is set.
pub fn ntk_trace(params: &NetParams, x: &[f64], include_bias: bool) -> Result<NtkTrace> {
    check_point(params, x)?;
    let cache = forward(params, &Matrix::column(x))?;
    let parts = partial_jacobians(params, &cache, 0);
    let per_layer: Vec<f64> = parts
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let a2 = norm_sq(&cache.act(k).col(0));
            let j2 = p.frobenius_sq();
            if include_bias {
                (a2 + 1.0) * j2
            } else {
                a2 * j2
            }
        })
        .collect();
    Ok(NtkTrace {
        total: per_layer.iter().sum(),
        per_layer,
    })
}

/// Jacobian of the output with respect to the parameters, `d_out x P`.
///
/// Columns run over layers in order; within a layer the weight entries come row-major,
/// followed by the bias entries when `include_bias` is set.
pub fn param_jacobian(params: &NetParams, x: &[f64], include_bias: bool) -> Result<Matrix> {
    check_point(params, x)?;
    let cache = forward(params, &Matrix::column(x))?;
    let parts = partial_jacobians(params, &cache, 0);
    let count: usize = params
        .layers()
        .iter()
        .map(|l| l.weight.rows() * (l.weight.cols() + usize::from(include_bias)))
        .sum();
    let d_out = params.d_out();
    let mut jp = Matrix::zeros(d_out, count);
    let mut offset = 0;
    for (k, p) in parts.iter().enumerate() {
        let a_prev = cache.act(k).col(0);
        let (rows, cols) = params.layers()[k].weight.shape();
        for i in 0..d_out {
            for r in 0..rows {
                let pir = p.get(i, r);
                for c in 0..cols {
                    jp.set(i, offset + r * cols + c, pir * a_prev[c]);
                }
            }
        }
        offset += rows * cols;
        if include_bias {
            for i in 0..d_out {
                for r in 0..rows {
                    jp.set(i, offset + r, p.get(i, r));
                }
            }
            offset += rows;
        }
    }
    Ok(jp)
}

/// Kernel block `Θ(x, y) = Σ_p ∂_p f(x) ∂_p f(y)ᵀ`, `d_out x d_out`.
pub fn ntk_cross(params: &NetParams, x: &[f64], y: &[f64], include_bias: bool) -> Result<Matrix> {
    check_point(params, y)?;
    let batch = Matrix::from_columns(&[x, y]);
    let g = ntk_gram(params, &batch, include_bias)?;
    let d = params.d_out();
    Ok(Matrix::from_fn(d, d, |i, j| g.get(i, d + j)))
}

/// Full NTK Gram matrix over a batch, `(N·d_out) x (N·d_out)`, indexed by `n·d_out + i`.
pub fn ntk_gram(params: &NetParams, x_batch: &Matrix, include_bias: bool) -> Result<Matrix> {
    let n = x_batch.cols();
    let d = params.d_out();
    if n * d > NTK_GRAM_MAX {
        return Err(Error::Resource(format!(
            "NTK Gram of size {} exceeds the limit {NTK_GRAM_MAX}",
            n * d
        )));
    }
    let cache = forward(params, x_batch)?;
    let parts: Vec<Vec<Matrix>> = (0..n).map(|c| partial_jacobians(params, &cache, c)).collect();
    let size = n * d;
    let mut gram = Matrix::zeros(size, size);
    for k in 0..params.depth() {
        let width = params.layers()[k].weight.rows();
        let mut stacked = Matrix::zeros(size, width);
        for (c, pj) in parts.iter().enumerate() {
            for i in 0..d {
                stacked.row_mut(c * d + i).copy_from_slice(pj[k].row(i));
            }
        }
        let block = stacked.matmul_t(&stacked);
        let acts = cache.act(k).transpose();
        let bias = if include_bias { 1.0 } else { 0.0 };
        for a in 0..n {
            for b in 0..n {
                let coef = dot(acts.row(a), acts.row(b)) + bias;
                for i in 0..d {
                    for j in 0..d {
                        gram[(a * d + i, b * d + j)] += coef * block.get(a * d + i, b * d + j);
                    }
                }
            }
        }
    }
    Ok(gram)
}

/// `Σ_ℓ ‖J(x → α_{ℓ-1})(x) u‖² · ‖J(α̃_ℓ → f)(x)ᵀ v‖²`: the mixed second derivative
/// `∂²_{x,y} vᵀΘ(x, y) v [u, u]` at `y = x` within the linear region of `x` (bias-free kernel).
pub fn ntk_bilinear_2nd_derivative(
    params: &NetParams,
    x: &[f64],
    u: &[f64],
    v: &[f64],
) -> Result<f64> {
    check_point(params, x)?;
    if u.len() != params.d_in() || v.len() != params.d_out() {
        return dim_err(
            "ntk_bilinear_2nd_derivative",
            format!("u of length {}, v of length {}", params.d_in(), params.d_out()),
            format!("{}, {}", u.len(), v.len()),
        );
    }
    for (name, w) in [("u", u), ("v", v)] {
        if (norm_sq(w) - 1.0).abs() > 1e-8 {
            return input(format!("{name} must be a unit vector"));
        }
    }
    let l = params.depth();
    let cache = forward(params, &Matrix::column(x))?;

    // fwd[k] = ‖J(x → α_k) u‖², k = 0..L-1.
    let mut fwd = Vec::with_capacity(l);
    let mut g = u.to_vec();
    fwd.push(norm_sq(&g));
    for ell in 1..l {
        g = params.layer(ell).weight.mul_vec(&g);
        for (gi, di) in g.iter_mut().zip(cache.pattern_diag(params, ell, 0)) {
            *gi *= di;
        }
        fwd.push(norm_sq(&g));
    }

    // bwd[ℓ-1] = ‖J(α̃_ℓ → f)ᵀ v‖², ℓ = 1..L.
    let mut bwd = vec![0.0; l];
    let mut h = v.to_vec();
    bwd[l - 1] = norm_sq(&h);
    for ell in (1..l).rev() {
        h = params.layer(ell + 1).weight.t_mul_vec(&h);
        for (hi, di) in h.iter_mut().zip(cache.pattern_diag(params, ell, 0)) {
            *hi *= di;
        }
        bwd[ell - 1] = norm_sq(&h);
    }
    Ok(fwd.iter().zip(&bwd).map(|(a, b)| a * b).sum())
}
