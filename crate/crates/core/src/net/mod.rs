//! Fully connected networks `α̃_ℓ = W_ℓ α_{ℓ-1} + b_ℓ`, `α_ℓ = σ_a(α̃_ℓ)` with an affine output
//! layer, together with exact gradients, input Jacobians and neural tangent kernel quantities.

mod io;
mod ntk;

pub use io::{load_params, read_params, save_params, write_params, MAGIC};
pub use ntk::{
    ntk_bilinear_2nd_derivative, ntk_cross, ntk_gram, ntk_trace, param_jacobian, NtkTrace,
    NTK_GRAM_MAX,
};

use crate::error::{dim_err, input, Result};
use crate::linalg::{norm_sq, Matrix};

/// One affine layer: `n_out x n_in` weight and length `n_out` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return dim_err("Layer::new", weight.rows(), bias.len());
        }
        Ok(Self { weight, bias })
    }

    /// Bias-free layer.
    pub fn linear(weight: Matrix) -> Self {
        let bias = vec![0.0; weight.rows()];
        Self { weight, bias }
    }

    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        Self::linear(Matrix::zeros(n_out, n_in))
    }

    pub fn squared_norm(&self) -> f64 {
        self.weight.frobenius_sq() + norm_sq(&self.bias)
    }
}

/// Network parameters `θ = (W_1, b_1, ..., W_L, b_L)` and the nonlinearity slope `a`.
///
/// `σ_a(x) = x` for `x >= 0` and `a·x` otherwise. `a = 0` is the ReLU; `a = 1` gives a deep
/// linear network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    layers: Vec<Layer>,
    slope: f64,
}

impl NetParams {
    /// Validates that layer shapes chain, entries are finite and `a ∈ (-1, 1]`.
    pub fn new(layers: Vec<Layer>, slope: f64) -> Result<Self> {
        if layers.is_empty() {
            return input("a network needs at least one layer");
        }
        if !(slope > -1.0 && slope <= 1.0) {
            return input(format!("slope a must lie in (-1, 1], got {slope}"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].weight.cols() != pair[0].weight.rows() {
                return dim_err(
                    "NetParams::new",
                    format!("layer {} input width {}", i + 2, pair[0].weight.rows()),
                    pair[1].weight.cols(),
                );
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.rows() {
                return dim_err("NetParams::new bias", l.weight.rows(), l.bias.len());
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return input(format!("layer {} has non-finite parameters", i + 1));
            }
        }
        Ok(Self { layers, slope })
    }

    /// Bias-free network with identity nonlinearity computing `W_L ⋯ W_1 x`.
    pub fn deep_linear(weights: Vec<Matrix>) -> Result<Self> {
        Self::new(weights.into_iter().map(Layer::linear).collect(), 1.0)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn is_linear(&self) -> bool {
        self.slope == 1.0
    }

    /// `(n_0, n_1, ..., n_L)`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.cols()];
        w.extend(self.layers.iter().map(|l| l.weight.rows()));
        w
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layer `ℓ` using 1-based indexing, `1 <= ℓ <= L`.
    pub fn layer(&self, ell: usize) -> &Layer {
        &self.layers[ell - 1]
    }

    /// Mutable access for optimizers; callers must keep shapes unchanged.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    /// `‖θ‖² = Σ_ℓ ‖W_ℓ‖²_F + ‖b_ℓ‖²`.
    pub fn squared_norm(&self) -> f64 {
        self.layers.iter().map(Layer::squared_norm).sum()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * (l.weight.cols() + 1))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        if x >= 0.0 {
            x
        } else {
            self.slope * x
        }
    }

    /// Derivative of `σ_a`, taking the right limit `1` at the kink.
    #[inline]
    pub fn sigma_prime(&self, x: f64) -> f64 {
        if x >= 0.0 {
            1.0
        } else {
            self.slope
        }
    }

    /// Network outputs for a batch of inputs given as columns.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Ok(forward(self, x)?.into_output())
    }

    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply(&Matrix::column(x))?.into_vec())
    }

    /// Per-layer `(‖W_ℓ‖²_F, ‖b_ℓ‖²)`.
    pub fn layer_norms(&self) -> Vec<(f64, f64)> {
        self.layers
            .iter()
            .map(|l| (l.weight.frobenius_sq(), norm_sq(&l.bias)))
            .collect()
    }
}

/// Pre-activations and activations of every layer for one batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    /// `preacts[ℓ-1] = α̃_ℓ`, `ℓ = 1..=L`.
    preacts: Vec<Matrix>,
    /// `acts[ℓ-1] = α_ℓ`, `ℓ = 1..L-1`.
    acts: Vec<Matrix>,
}

impl ForwardCache {
    pub fn depth(&self) -> usize {
        self.preacts.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.cols()
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }

    /// `α̃_ℓ(X)` for `1 <= ℓ <= L`.
    pub fn preact(&self, ell: usize) -> &Matrix {
        &self.preacts[ell - 1]
    }

    /// `α_ℓ(X)` for `0 <= ℓ <= L-1`, with `α_0 = X`.
    pub fn act(&self, ell: usize) -> &Matrix {
        if ell == 0 {
            &self.input
        } else {
            &self.acts[ell - 1]
        }
    }

    pub fn output(&self) -> &Matrix {
        &self.preacts[self.preacts.len() - 1]
    }

    pub fn into_output(mut self) -> Matrix {
        self.preacts.pop().expect("non-empty network")
    }

    /// Diagonal of `D_ℓ(x)` for hidden layer `1 <= ℓ <= L-1` at batch column `col`.
    pub fn pattern_diag(&self, params: &NetParams, ell: usize, col: usize) -> Vec<f64> {
        let z = self.preact(ell);
        (0..z.rows()).map(|i| params.sigma_prime(z.get(i, col))).collect()
    }

    /// Activation pattern of all hidden layers at batch column `col`.
    pub fn pattern(&self, params: &NetParams, col: usize) -> ActivationPattern {
        let l = self.depth();
        ActivationPattern {
            diags: (1..l).map(|ell| self.pattern_diag(params, ell, col)).collect(),
        }
    }

    /// Smallest `|α̃_ℓ,i|` over hidden units at column `col`; zero means the point sits on a kink.
    pub fn kink_margin(&self, col: usize) -> f64 {
        let mut m = f64::INFINITY;
        for z in &self.preacts[..self.preacts.len() - 1] {
            for i in 0..z.rows() {
                m = m.min(z.get(i, col).abs());
            }
        }
        m
    }
}

/// Diagonals of `D_ℓ(x) = diag(σ'_a(α̃_ℓ(x)))` for the hidden layers `ℓ = 1..L-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPattern {
    pub diags: Vec<Vec<f64>>,
}

fn check_input(params: &NetParams, x: &Matrix) -> Result<()> {
    if x.rows() != params.d_in() {
        return dim_err("forward", format!("{} input rows", params.d_in()), x.rows());
    }
    if !x.is_finite() {
        return input("inputs must be finite");
    }
    Ok(())
}

fn affine(layer: &Layer, a: &Matrix) -> Matrix {
    let mut z = layer.weight.matmul(a);
    let n = z.cols();
    for (i, &b) in layer.bias.iter().enumerate() {
        if b != 0.0 {
            for v in &mut z.row_mut(i)[..n] {
                *v += b;
            }
        }
    }
    z
}

/// Runs the network on the columns of `x`, keeping every intermediate layer.
pub fn forward(params: &NetParams, x: &Matrix) -> Result<ForwardCache> {
    check_input(params, x)?;
    let l = params.depth();
    let mut preacts = Vec::with_capacity(l);
    let mut acts: Vec<Matrix> = Vec::with_capacity(l.saturating_sub(1));
    for (idx, layer) in params.layers.iter().enumerate() {
        let prev = if idx == 0 { x } else { &acts[idx - 1] };
        let z = affine(layer, prev);
        if idx + 1 < l {
            let mut a = z.clone();
            if params.slope != 1.0 {
                for v in a.as_mut_slice() {
                    *v = params.sigma(*v);
                }
            }
            acts.push(a);
        }
        preacts.push(z);
    }
    Ok(ForwardCache {
        input: x.clone(),
        preacts,
        acts,
    })
}

/// Input Jacobian `Jf(x) = W_L D_{L-1}(x) W_{L-1} ⋯ D_1(x) W_1`.
pub fn jacobian(params: &NetParams, x: &[f64]) -> Result<Matrix> {
    let cache = forward(params, &Matrix::column(x))?;
    Ok(jacobian_cached(params, &cache, 0))
}

/// Input Jacobian at batch column `col` of an existing forward pass.
pub fn jacobian_cached(params: &NetParams, cache: &ForwardCache, col: usize) -> Matrix {
    let mut j = params.layers[0].weight.clone();
    for ell in 1..params.depth() {
        j.scale_rows(&cache.pattern_diag(params, ell, col));
        j = params.layers[ell].weight.matmul(&j);
    }
    j
}

/// `J(α̃_ℓ → f)(x) = W_L D_{L-1} ⋯ W_{ℓ+1} D_ℓ` at batch column `col`, for `1 <= ℓ <= L`.
pub fn partial_jacobian(
    params: &NetParams,
    cache: &ForwardCache,
    ell: usize,
    col: usize,
) -> Result<Matrix> {
    let l = params.depth();
    if ell == 0 || ell > l {
        return input(format!("layer index {ell} outside 1..={l}"));
    }
    if col >= cache.batch_size() {
        return input(format!("column {col} outside batch of {}", cache.batch_size()));
    }
    let mut p = Matrix::identity(params.d_out());
    for k in (ell..l).rev() {
        p = p.matmul(&params.layers[k].weight);
        p.scale_cols(&cache.pattern_diag(params, k, col));
    }
    Ok(p)
}

/// All partial Jacobians `J(α̃_ℓ → f)` for `ℓ = 1..=L` (index `ℓ-1`) from one backward sweep.
pub fn partial_jacobians(params: &NetParams, cache: &ForwardCache, col: usize) -> Vec<Matrix> {
    let l = params.depth();
    let mut out = vec![Matrix::zeros(0, 0); l];
    let mut p = Matrix::identity(params.d_out());
    for k in (1..=l).rev() {
        if k < l {
            p = p.matmul(&params.layers[k].weight);
            p.scale_cols(&cache.pattern_diag(params, k, col));
        }
        out[k - 1] = p.clone();
    }
    out
}

/// Gradient with the same layout as [`NetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn squared_norm(&self) -> f64 {
        self.layers.iter().map(Layer::squared_norm).sum()
    }
}

/// Objective value, its data term and gradient.
#[derive(Debug, Clone)]
pub struct LossGrad {
    /// `(1/N) Σ ‖f(x_i) − y_i‖²`.
    pub mse: f64,
    /// `data_weight · mse + λ‖θ‖²`.
    pub cost: f64,
    pub grad: Gradient,
}

fn check_targets(params: &NetParams, x: &Matrix, y: &Matrix) -> Result<()> {
    if y.rows() != params.d_out() || y.cols() != x.cols() {
        return dim_err(
            "targets",
            format!("{}x{}", params.d_out(), x.cols()),
            format!("{}x{}", y.rows(), y.cols()),
        );
    }
    if x.cols() == 0 {
        return input("empty batch");
    }
    Ok(())
}

/// Gradient of `(1/N) Σ ‖f_θ(x_i) − y_i‖² + λ‖θ‖²` by reverse accumulation.
pub fn grad(params: &NetParams, x: &Matrix, y: &Matrix, lambda: f64) -> Result<LossGrad> {
    grad_weighted(params, x, y, lambda, 1.0)
}

/// As [`grad`] with the data term scaled by `data_weight`.
pub fn grad_weighted(
    params: &NetParams,
    x: &Matrix,
    y: &Matrix,
    lambda: f64,
    data_weight: f64,
) -> Result<LossGrad> {
    check_targets(params, x, y)?;
    let cache = forward(params, x)?;
    let n = x.cols() as f64;
    let resid = cache.output().sub(y);
    let mse = resid.frobenius_sq() / n;
    let cost = data_weight * mse + lambda * params.squared_norm();

    let l = params.depth();
    let mut layers: Vec<Layer> = Vec::with_capacity(l);
    let mut delta = resid.scale(2.0 * data_weight / n);
    for k in (0..l).rev() {
        let layer = &params.layers[k];
        let a_prev = cache.act(k);
        let mut gw = delta.matmul_t(a_prev);
        gw.axpy(2.0 * lambda, &layer.weight);
        let gb: Vec<f64> = (0..delta.rows())
            .map(|i| delta.row(i).iter().sum::<f64>() + 2.0 * lambda * layer.bias[i])
            .collect();
        layers.push(Layer {
            weight: gw,
            bias: gb,
        });
        if k > 0 {
            let mut back = layer.weight.t_matmul(&delta);
            if params.slope != 1.0 {
                let z = cache.preact(k);
                for (b, &zv) in back.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if zv < 0.0 {
                        *b *= params.slope;
                    }
                }
            }
            delta = back;
        }
    }
    layers.reverse();
    Ok(LossGrad {
        mse,
        cost,
        grad: Gradient { layers },
    })
}

/// Mean squared error `(1/N) Σ ‖f(x_i) − y_i‖²`.
pub fn mse(params: &NetParams, x: &Matrix, y: &Matrix) -> Result<f64> {
    check_targets(params, x, y)?;
    let out = params.apply(x)?;
    Ok(out.sub(y).frobenius_sq() / x.cols() as f64)
}

/// `max_{ℓ,i} |‖W_{ℓ,i·}‖² + b_{ℓ,i}² − ‖W_{ℓ+1,·i}‖²|` over hidden neurons; zero when balanced.
pub fn balancedness_residual(params: &NetParams) -> f64 {
    let mut worst: f64 = 0.0;
    for pair in params.layers.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        for i in 0..cur.weight.rows() {
            let incoming = norm_sq(cur.weight.row(i)) + cur.bias[i] * cur.bias[i];
            let outgoing: f64 = (0..next.weight.rows())
                .map(|r| next.weight.get(r, i).powi(2))
                .sum();
            worst = worst.max((incoming - outgoing).abs());
        }
    }
    worst
}
