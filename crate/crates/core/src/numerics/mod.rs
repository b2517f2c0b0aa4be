//! Dense linear algebra, Laplacian spectral bounds, and reverse-mode differentiation.

mod finite_diff;
mod matrix;
mod sparse;
mod spectral;
pub mod tape;

pub use finite_diff::finite_diff_grad;
pub use matrix::{row_l2_normalize, rows_unit_norm, Matrix, NORM_EPS};
pub use sparse::Csr;
pub use spectral::{jacobi_eigenvalues, laplacian, laplacian_spectral_bracket, SpectralBracket};
pub use tape::{Primitive, Tape, Var};

/// Variance guard inside layer normalisation.
pub const LAYER_NORM_EPS: f64 = 1e-5;
