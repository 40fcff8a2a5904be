//! Built-in model generators.
//!
//! Random instances are drawn from a portable stream so that other
//! implementations can reproduce them bit for bit:
//!
//! * the generator is SplitMix64 seeded with the 64-bit seed;
//! * a uniform draw is `((x >> 11) + 0.5) · 2⁻⁵³` for the next output `x`;
//! * a standard normal is Box–Muller on two consecutive uniforms,
//!   `√(−2 ln u₁) cos(2π u₂)` (the sine partner is discarded);
//! * complex normals take the real part first, then the imaginary part;
//! * matrices are filled row-major.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::linalg::{hs_norm, transpose, ComplexMatrix, HermitianMatrix, PairingMatrix};
use crate::model::QuadraticModel;

/// Parameters of one BCS fiber `{k, −k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcsParams {
    /// Kinetic energy `ε_k ≥ 0`.
    pub epsilon: f64,
    /// Chemical potential.
    pub kappa: f64,
    /// Coupling `γ > 0`.
    pub gamma: f64,
    /// Order parameter.
    pub c: Complex64,
}

impl BcsParams {
    pub fn new(epsilon: f64, kappa: f64, gamma: f64, c: Complex64) -> Result<Self> {
        let finite = [epsilon, kappa, gamma, c.re, c.im].iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Parse("BCS parameters must be finite".into()));
        }
        if gamma <= 0.0 {
            return Err(Error::InvariantViolation {
                name: "gamma > 0".into(),
                residual: gamma,
            });
        }
        if epsilon < 0.0 {
            return Err(Error::InvariantViolation {
                name: "epsilon >= 0".into(),
                residual: epsilon,
            });
        }
        Ok(Self {
            epsilon,
            kappa,
            gamma,
            c,
        })
    }

    fn offset(&self) -> f64 {
        self.epsilon - self.kappa
    }
}

pub fn bcs_fiber(p: &BcsParams) -> QuadraticModel {
    bcs_fiber_scaled(p, 1.0)
}

/// Fiber model with `E₀ = γ|c|² · volume_factor`. Basis order is
/// `(−k↓, −k↑, k↓, k↑)`.
pub fn bcs_fiber_scaled(p: &BcsParams, volume_factor: f64) -> QuadraticModel {
    let h = 0.5 * p.gamma * p.c;
    let z = Complex64::new(0.0, 0.0);
    #[rustfmt::skip]
    let d = ComplexMatrix::from_row_slice(4, 4, &[
        z,  z,  z,  h,
        z,  z,  h,  z,
        z, -h,  z,  z,
        -h, z,  z,  z,
    ]);
    QuadraticModel {
        upsilon0: HermitianMatrix::identity(4).scaled(p.offset()),
        d0: PairingMatrix::new(d).expect("antidiagonal pattern is antisymmetric"),
        e0: p.gamma * p.c.norm_sqr() * volume_factor,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcsClosedForm {
    pub lambda: f64,
    pub fiber_e_shift: f64,
    pub u_sq: f64,
    pub v_sq: f64,
}

/// Quasiparticle energy, fiber energy shift and coherence factors.
///
/// For `c = 0` nothing couples and the fiber is already diagonal, so
/// `lambda = ε − κ` (which may be negative) with no shift.
pub fn bcs_closed_form(p: &BcsParams) -> BcsClosedForm {
    let a = p.offset();
    if p.c == Complex64::new(0.0, 0.0) {
        return BcsClosedForm {
            lambda: a,
            fiber_e_shift: 0.0,
            u_sq: 1.0,
            v_sq: 0.0,
        };
    }
    let lambda = a.hypot(p.gamma * p.c.norm());
    BcsClosedForm {
        lambda,
        fiber_e_shift: 2.0 * (a - lambda),
        u_sq: 0.5 * (1.0 + a / lambda),
        v_sq: 0.5 * (1.0 - a / lambda),
    }
}

/// The portable normal stream described in the module docs.
#[derive(Debug, Clone)]
pub struct NormalStream(SplitMix64);

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn complex_normal(&mut self) -> Complex64 {
        let re = self.normal();
        Complex64::new(re, self.normal())
    }

    pub fn complex_matrix(&mut self, n: usize) -> ComplexMatrix {
        let data: Vec<Complex64> = (0..n * n).map(|_| self.complex_normal()).collect();
        ComplexMatrix::from_row_slice(n, n, &data)
    }
}

/// Q factor of a QR decomposition with the phases of `diag(R)` moved into Q,
/// so the result is Haar-distributed for Gaussian input.
fn haar_q(m: ComplexMatrix) -> ComplexMatrix {
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        let rj = r[(j, j)];
        if rj.norm() > 0.0 {
            let phase = rj / rj.norm();
            for i in 0..q.nrows() {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

/// Random unitary drawn from the stream.
pub fn random_unitary(n: usize, rng: &mut NormalStream) -> ComplexMatrix {
    haar_q(rng.complex_matrix(n))
}

/// Random real orthogonal matrix, as a complex matrix with zero imaginary part.
pub fn random_orthogonal(n: usize, seed: u64) -> ComplexMatrix {
    let mut rng = NormalStream::new(seed);
    let data: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
    let qr = DMatrix::from_row_slice(n, n, &data).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q.map(Complex64::from)
}

pub const DEFAULT_D_SCALE: f64 = 0.5;

pub fn random_admissible(dim: usize, seed: u64, gap: f64) -> Result<QuadraticModel> {
    random_admissible_scaled(dim, seed, gap, DEFAULT_D_SCALE)
}

/// `Υ₀ = Q diag(gap + |ξᵢ|) Q*` and `D₀ = (R − Rᵀ)/2` rescaled to
/// `‖D₀‖₂ = d_scale · gap`. Draw order: `Q` (from an `n×n` complex Gaussian),
/// then `ξ`, then `R`.
pub fn random_admissible_scaled(dim: usize, seed: u64, gap: f64, d_scale: f64) -> Result<QuadraticModel> {
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            op: "random_admissible",
            expected: 1,
            got: 0,
        });
    }
    if !(gap > 0.0 && gap.is_finite()) || !(d_scale >= 0.0 && d_scale.is_finite()) {
        return Err(Error::Parse(format!(
            "random_admissible: need gap > 0 and d_scale >= 0, got gap = {gap}, d_scale = {d_scale}"
        )));
    }
    let mut rng = NormalStream::new(seed);
    let q = random_unitary(dim, &mut rng);
    let diag: Vec<f64> = (0..dim).map(|_| gap + rng.normal().abs()).collect();
    let lam = HermitianMatrix::from_diagonal(&diag);
    let upsilon0 = HermitianMatrix::hermitian_part(&(&q * lam.matrix() * q.adjoint()));
    let r = rng.complex_matrix(dim);
    let mut d = (&r - transpose(&r)).scale(0.5);
    let norm = hs_norm(&d);
    if norm > 0.0 {
        d *= Complex64::from(d_scale * gap / norm);
    }
    QuadraticModel::new(upsilon0, PairingMatrix::new(d)?, 0.0)
}

/// `(OΥ₀Oᵀ, OD₀Oᵀ, E₀)` for a real orthogonal `O`.
pub fn rotate_model(model: &QuadraticModel, o: &ComplexMatrix) -> Result<QuadraticModel> {
    let ot = transpose(o);
    QuadraticModel::new(
        HermitianMatrix::hermitian_part(&(o * model.upsilon0.matrix() * &ot)),
        PairingMatrix::antisymmetric_part(&(o * model.d0.matrix() * &ot)),
        model.e0,
    )
}
