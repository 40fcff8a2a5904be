use crate::error::{Error, Result};
use crate::linalg::{hs_norm, HermitianMatrix, PairingMatrix};

/// The data `(Υ₀, D₀, E₀)` of a fermionic quadratic Hamiltonian
///
/// `H₀ = Σ {Υ₀}ₖₗ aₖ*aₗ + {D₀}ₖₗ aₖ*aₗ* + {D̄₀}ₖₗ aₗaₖ + E₀`
///
/// on `dim` fermionic modes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub upsilon0: HermitianMatrix,
    pub d0: PairingMatrix,
    pub e0: f64,
}

impl QuadraticModel {
    pub fn new(upsilon0: HermitianMatrix, d0: PairingMatrix, e0: f64) -> Result<Self> {
        if upsilon0.dim() != d0.dim() {
            return Err(Error::DimensionMismatch {
                op: "QuadraticModel",
                expected: upsilon0.dim(),
                got: d0.dim(),
            });
        }
        if !e0.is_finite() {
            return Err(Error::InvariantViolation {
                name: "e0 finite".into(),
                residual: e0,
            });
        }
        Ok(Self { upsilon0, d0, e0 })
    }

    pub fn dim(&self) -> usize {
        self.upsilon0.dim()
    }

    /// `‖Υ₀D₀ − D₀Υ₀ᵀ‖₂`, zero exactly in the commuting case.
    pub fn commutator_residual(&self) -> f64 {
        let u = self.upsilon0.matrix();
        let d = self.d0.matrix();
        hs_norm(&(u * d - d * u.transpose()))
    }

    /// The constant of motion `tr(Υ₀² + 4D₀D₀*) = ‖Υ₀‖₂² + 4‖D₀‖₂²`.
    pub fn motion_baseline(&self) -> f64 {
        hs_norm(self.upsilon0.matrix()).powi(2) + 4.0 * hs_norm(self.d0.matrix()).powi(2)
    }
}
