//! Energy-constrained graph diffusion and the attention networks it induces.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, Laplacian spectral bounds, and a reverse-mode tape.
//! - [`graph`]: observed structure, normalisations, kNN and SBM generation, file loaders.
//! - [`coupling`]: coupling matrices `S^(k)` for every model family and their penalty pairs `(f, δ)`.
//! - [`diffusion`]: explicit-Euler steppers, the O(N) simple-attention propagation, trajectories.
//! - [`energy`]: the energy functionals and the descent / bound audits over trajectories.
//! - [`model`]: the trainable multi-head network built on the tape.
//! - [`train`]: losses, Adam, mini-batching, metrics and the training loop.
//! - [`audit`]: the seeded invariant suites shared by the CLI and the acceptance tests.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod coupling;
pub mod diffusion;
pub mod energy;
pub mod error;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use numerics::Matrix;
