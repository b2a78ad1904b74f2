//! Dense linear algebra and spectral functionals of singular values.

mod eigen;
mod matrix;
mod spectral;
mod svd;

pub use eigen::{sym_eigen, SymEigen};
pub use matrix::{dot, norm_sq, Matrix};
pub use spectral::*;
pub use svd::{singular_values, svd, Svd};

/// Default relative threshold below which a singular value counts as zero.
pub const DEFAULT_TOL: f64 = 1e-10;
