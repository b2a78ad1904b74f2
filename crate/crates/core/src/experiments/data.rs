use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{input, Result};
use crate::linalg::{dot, norm_sq, pinv, rank, Matrix};
use crate::train::{init, orthogonal_matrix, InitScheme};

pub const RANK2_LATENT: usize = 8;
pub const RANK2_DIM: usize = 20;
pub const RANK2_HIDDEN: usize = 64;

/// Inputs `x = g(z)` and targets `y = h(z₁, z₂)` for random shallow ReLU networks `g, h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank2Dataset {
    /// `20 x N`.
    pub x: Matrix,
    /// `20 x N`.
    pub y: Matrix,
    /// `8 x N`.
    pub latent: Matrix,
    pub seed: u64,
    pub g_seed: u64,
    pub h_seed: u64,
    /// Rank (relative threshold `1e-2`) of the least-squares linear map `x ↦ y`.
    pub linear_fit_rank: usize,
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gen_rank2(seed: u64, n_samples: usize) -> Result<Rank2Dataset> {
    if n_samples < 2 {
        return input(format!("need at least 2 samples, got {n_samples}"));
    }
    let g_seed = sub_seed(seed, 1);
    let h_seed = sub_seed(seed, 2);
    let g = init(&[RANK2_LATENT, RANK2_HIDDEN, RANK2_DIM], 0.0, InitScheme::FanIn, g_seed)?;
    let h = init(&[2, RANK2_HIDDEN, RANK2_DIM], 0.0, InitScheme::FanIn, h_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 3));
    let latent = gaussian(&mut rng, RANK2_LATENT, n_samples);
    let x = g.apply(&latent)?;
    let y = h.apply(&Matrix::from_rows(&[latent.row(0), latent.row(1)]))?;
    let coef = y.matmul(&pinv(&x, 1e-10)?);
    let linear_fit_rank = rank(&coef, 1e-2)?;
    Ok(Rank2Dataset {
        x,
        y,
        latent,
        seed,
        g_seed,
        h_seed,
        linear_fit_rank,
    })
}

impl Rank2Dataset {
    /// Copy with `x` and `y` rescaled so that the mean squared column norms equal
    /// `x_norm²` and `y_norm²`.
    pub fn normalized(&self, x_norm: f64, y_norm: f64) -> Self {
        let mut out = self.clone();
        out.x = rescale_columns(&self.x, x_norm);
        out.y = rescale_columns(&self.y, y_norm);
        out
    }
}

fn rescale_columns(m: &Matrix, target: f64) -> Matrix {
    let ms = m.frobenius_sq() / m.cols().max(1) as f64;
    if ms > 0.0 {
        m.scale(target / ms.sqrt())
    } else {
        m.clone()
    }
}

/// Loss `C(v) = ‖vvᵀ − M‖²_F` with `M = wwᵀ + E`.
pub fn symmetry_loss(v: &[f64], target: &Matrix) -> f64 {
    let d = v.len();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let r = v[i] * v[j] - target.get(i, j);
            acc += r * r;
        }
    }
    acc
}

/// `∇C(v) = 4(vvᵀ − M)v` for symmetric `M`.
pub fn symmetry_grad(v: &[f64], target: &Matrix) -> Vec<f64> {
    let vv = norm_sq(v);
    let mv = target.mul_vec(v);
    v.iter().zip(&mv).map(|(vi, mi)| 4.0 * (vv * vi - mi)).collect()
}

/// Summary statistics `((wᵀv)², ‖(I − wwᵀ)v‖²)`.
pub fn summary_stats(v: &[f64], w: &[f64]) -> [f64; 2] {
    let a = dot(w, v);
    [a * a, (norm_sq(v) - a * a).max(0.0)]
}

/// Losses `C(v(1)), ..., C(v(T))` of inner gradient descent from `v0`, and the final iterate.
pub fn inner_gd(v0: &[f64], target: &Matrix, eta: f64, horizon: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut v = v0.to_vec();
    let mut losses = Vec::with_capacity(horizon);
    let mut path = Vec::with_capacity(horizon + 1);
    path.push(v.clone());
    for _ in 0..horizon {
        let g = symmetry_grad(&v, target);
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi -= eta * gi;
        }
        losses.push(symmetry_loss(&v, target));
        path.push(v.clone());
    }
    (losses, path)
}

const DIVERGED_LOSS: f64 = 1e6;

/// Supervised task: predict the inner-GD loss trajectory from its starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryTask {
    pub w: Vec<f64>,
    pub noise_e: Matrix,
    pub inner_eta: f64,
    pub horizon_t: usize,
    /// `d x N` starting points.
    pub v0_samples: Matrix,
    /// `T x N` loss trajectories.
    pub targets: Matrix,
    /// `2 x N` summary statistics of the starting points.
    pub summary: Matrix,
    pub seed: u64,
    /// Samples that diverged and were redrawn with a damped start.
    pub regenerated: usize,
}

impl SymmetryTask {
    /// `wwᵀ + E`.
    pub fn target_matrix(&self) -> Matrix {
        let d = self.w.len();
        Matrix::from_fn(d, d, |i, j| self.w[i] * self.w[j] + self.noise_e.get(i, j))
    }

    /// Loss trajectories and summary statistics for arbitrary starting points (columns).
    pub fn evaluate(&self, v0: &Matrix) -> (Matrix, Matrix) {
        let m = self.target_matrix();
        let n = v0.cols();
        let mut targets = Matrix::zeros(self.horizon_t, n);
        let mut summary = Matrix::zeros(2, n);
        for c in 0..n {
            let v = v0.col(c);
            let (losses, _) = inner_gd(&v, &m, self.inner_eta, self.horizon_t);
            targets.set_col(c, &losses);
            summary.set_col(c, &summary_stats(&v, &self.w));
        }
        (targets, summary)
    }
}

/// Random unit axis `w`, symmetric noise `E` with entries of variance `noise_scale²/d`, and
/// `N` starting points `v0 = a·w + b·u` with their inner-GD loss trajectories. Here
/// `a ~ U[−1, 1]`, `b ~ U[0.2, 1.2]` and `u` is uniform on the unit sphere of `w⊥`, so both
/// summary statistics vary over the sample.
pub fn gen_symmetry(
    seed: u64,
    d: usize,
    horizon_t: usize,
    noise_scale: f64,
    inner_eta: f64,
    n_samples: usize,
) -> Result<SymmetryTask> {
    if d < 3 {
        return input(format!("dimension must be at least 3, got {d}"));
    }
    if horizon_t < 1 {
        return input("horizon must be at least 1");
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return input(format!("noise scale must be nonnegative, got {noise_scale}"));
    }
    if !(inner_eta > 0.0 && inner_eta.is_finite()) {
        return input(format!("inner step size must be positive, got {inner_eta}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let wn = norm_sq(&w).sqrt();
    w.iter_mut().for_each(|v| *v /= wn);

    let sd = noise_scale / (d as f64).sqrt();
    let g = gaussian(&mut rng, d, d).scale(sd);
    let noise_e = g.add(&g.transpose()).scale(std::f64::consts::FRAC_1_SQRT_2);

    let mut task = SymmetryTask {
        w,
        noise_e,
        inner_eta,
        horizon_t,
        v0_samples: Matrix::zeros(d, n_samples),
        targets: Matrix::zeros(horizon_t, n_samples),
        summary: Matrix::zeros(2, n_samples),
        seed,
        regenerated: 0,
    };
    let m = task.target_matrix();
    for c in 0..n_samples {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(0.2..1.2);
        let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let along = dot(&u, &task.w);
        u.iter_mut().zip(&task.w).for_each(|(ui, wi)| *ui -= along * wi);
        let un = norm_sq(&u).sqrt();
        let mut v0: Vec<f64> = u.iter().zip(&task.w).map(|(ui, wi)| a * wi + b * ui / un).collect();
        loop {
            let (losses, _) = inner_gd(&v0, &m, inner_eta, horizon_t);
            if losses.iter().all(|l| l.is_finite() && *l <= DIVERGED_LOSS) {
                task.targets.set_col(c, &losses);
                break;
            }
            task.regenerated += 1;
            v0.iter_mut().for_each(|v| *v *= 0.5);
        }
        task.summary.set_col(c, &summary_stats(&v0, &task.w));
        task.v0_samples.set_col(c, &v0);
    }
    Ok(task)
}

/// Householder reflection `I − 2hhᵀ` with a random unit `h ⊥ w`; it fixes `w` and preserves
/// the summary statistics.
pub fn random_reflection_fixing(w: &[f64], rng: &mut impl Rng) -> Matrix {
    let d = w.len();
    let mut h: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let a = dot(&h, w);
    h.iter_mut().zip(w).for_each(|(hi, wi)| *hi -= a * wi);
    let hn = norm_sq(&h).sqrt();
    h.iter_mut().for_each(|v| *v /= hn);
    Matrix::from_fn(d, d, |i, j| f64::from(u8::from(i == j)) - 2.0 * h[i] * h[j])
}

/// Haar-random orthogonal map of `w⊥` extended by `w ↦ w`: moves a point to a uniformly random
/// point of its orbit.
pub fn random_orthogonal_fixing(w: &[f64], rng: &mut impl Rng) -> Result<Matrix> {
    let d = w.len();
    let seed = rng.random();
    let o = orthogonal_matrix(d - 1, d - 1, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut embedded = Matrix::identity(d);
    for i in 0..d - 1 {
        for j in 0..d - 1 {
            embedded.set(i + 1, j + 1, o.get(i, j));
        }
    }
    let h = householder_to_first_axis(w);
    Ok(h.matmul(&embedded).matmul(&h))
}

/// Symmetric orthogonal `H` with `Hw = e₁` for unit `w`.
fn householder_to_first_axis(w: &[f64]) -> Matrix {
    let d = w.len();
    let mut u = w.to_vec();
    u[0] -= 1.0;
    let un = norm_sq(&u);
    if un < 1e-24 {
        return Matrix::identity(d);
    }
    Matrix::from_fn(d, d, |i, j| f64::from(u8::from(i == j)) - 2.0 * u[i] * u[j] / un)
}
