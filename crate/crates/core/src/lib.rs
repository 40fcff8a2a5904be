//! Numerical N-diagonalization of finite-dimensional fermionic quadratic
//! Hamiltonians by an elliptic operator-valued flow, with the implementing
//! Bogoliubov transformation and independent spectral oracles.

pub mod bogoliubov;
pub mod diagonalizer;
pub mod error;
pub mod flow;
pub mod fock;
pub mod io;
pub mod linalg;
pub mod model;
pub mod models;

pub use error::{Error, Result};
pub use diagonalizer::{diagonalize, DiagonalizationResult, DiagonalizeOptions};
pub use model::QuadraticModel;
