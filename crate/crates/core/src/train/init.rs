use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::linalg::{svd, Matrix};
use crate::net::{Layer, NetParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Gaussian weights with variance `2 / (n_{ℓ-1} (1 + a²))`.
    FanIn,
    /// Random partial isometries (orthonormal columns, or rows when wide).
    Orthogonal,
}

impl std::str::FromStr for InitScheme {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fan_in" | "fanin" | "gaussian" => Ok(Self::FanIn),
            "orthogonal" | "orth" => Ok(Self::Orthogonal),
            other => input(format!("unknown init scheme {other:?}")),
        }
    }
}

pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Haar-random partial isometry: the polar factor `UVᵀ` of a Gaussian matrix.
pub fn orthogonal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Matrix> {
    let g = gaussian_matrix(rows, cols, 1.0, rng);
    let d = svd(&g)?;
    Ok(d.u.matmul_t(&d.v))
}

/// Random parameters for layer widths `n_0, ..., n_L` with zero biases; deterministic per seed.
pub fn init(widths: &[usize], slope: f64, scheme: InitScheme, seed: u64) -> Result<NetParams> {
    if widths.len() < 2 {
        return input("init needs at least an input and an output width");
    }
    if widths.contains(&0) {
        return input("layer widths must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for w in widths.windows(2) {
        let weight = match scheme {
            InitScheme::FanIn => {
                let var = 2.0 / (w[0] as f64 * (1.0 + slope * slope));
                gaussian_matrix(w[1], w[0], var.sqrt(), &mut rng)
            }
            InitScheme::Orthogonal => orthogonal_matrix(w[1], w[0], &mut rng)?,
        };
        layers.push(Layer::linear(weight));
    }
    NetParams::new(layers, slope)
}
