//! Dense complex matrix algebra in a fixed real basis.
//!
//! Because the basis is real, the antiunitary conjugation 𝒞 acts entrywise,
//! so `Xᵀ` is the plain transpose, `X̄` the entrywise conjugate and
//! `X* = X̄ᵀ` the usual conjugate transpose.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Numerical tolerances shared by the whole crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub hermiticity: f64,
    pub pairing: f64,
    pub eig: f64,
    pub psd: f64,
    pub sqrt: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermiticity: 1e-10,
            pairing: 1e-10,
            eig: 1e-10,
            psd: 1e-9,
            sqrt: 1e-9,
        }
    }
}

pub fn transpose(m: &ComplexMatrix) -> ComplexMatrix {
    m.transpose()
}

pub fn conjugate(m: &ComplexMatrix) -> ComplexMatrix {
    m.map(|z| z.conj())
}

pub fn adjoint(m: &ComplexMatrix) -> ComplexMatrix {
    m.adjoint()
}

/// Hilbert-Schmidt (Frobenius) norm `√tr(M*M)`.
pub fn hs_norm(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(m: &ComplexMatrix) -> Complex64 {
    m.trace()
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

pub fn zeros(n: usize) -> ComplexMatrix {
    ComplexMatrix::zeros(n, n)
}

pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_row_iterator(rows, cols, data.iter().map(|&x| Complex64::new(x, 0.0)))
}

pub fn is_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// `‖M − M*‖₂ / max(1, ‖M‖₂)`.
pub fn hermiticity_residual(m: &ComplexMatrix) -> f64 {
    hs_norm(&(m - m.adjoint())) / hs_norm(m).max(1.0)
}

/// `‖M + Mᵀ‖₂ / max(1, ‖M‖₂)`.
pub fn pairing_residual(m: &ComplexMatrix) -> f64 {
    hs_norm(&(m + m.transpose())) / hs_norm(m).max(1.0)
}

/// Largest singular value.
pub fn op_norm(m: &ComplexMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = HermitianMatrix::hermitian_part(&(m.adjoint() * m));
    let top = eigh(&gram).values.last().copied().unwrap_or(0.0);
    top.max(0.0).sqrt()
}

fn check_square(op: &'static str, m: &ComplexMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            op,
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::InvariantViolation {
            name: format!("{op}: dim must be positive"),
            residual: 0.0,
        });
    }
    if !is_finite(m) {
        return Err(Error::InvariantViolation {
            name: format!("{op}: finite entries"),
            residual: f64::NAN,
        });
    }
    Ok(())
}

/// A square matrix with `M = M*` up to the hermiticity tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        Self::with_tol(m, Tolerances::default().hermiticity)
    }

    pub fn with_tol(m: ComplexMatrix, tol: f64) -> Result<Self> {
        check_square("HermitianMatrix", &m)?;
        let r = hermiticity_residual(&m);
        if r > tol {
            return Err(Error::InvariantViolation {
                name: "hermitian".into(),
                residual: r,
            });
        }
        Ok(Self(m))
    }

    /// `(M + M*)/2`; always Hermitian.
    pub fn hermitian_part(m: &ComplexMatrix) -> Self {
        Self((m + m.adjoint()).scale(0.5))
    }

    pub fn identity(n: usize) -> Self {
        Self(identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(zeros(n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = zeros(n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    /// Real trace.
    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eigh(self).values[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *eigh(self).values.last().expect("nonempty")
    }
}

/// A square matrix with `Mᵀ = −M` up to the pairing tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingMatrix(ComplexMatrix);

impl PairingMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        Self::with_tol(m, Tolerances::default().pairing)
    }

    pub fn with_tol(m: ComplexMatrix, tol: f64) -> Result<Self> {
        check_square("PairingMatrix", &m)?;
        let r = pairing_residual(&m);
        if r > tol {
            return Err(Error::InvariantViolation {
                name: "pairing".into(),
                residual: r,
            });
        }
        Ok(Self(m))
    }

    /// `(M − Mᵀ)/2`; always antisymmetric.
    pub fn antisymmetric_part(m: &ComplexMatrix) -> Self {
        Self((m - m.transpose()).scale(0.5))
    }

    pub fn zeros(n: usize) -> Self {
        Self(zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.0
    }
}

/// Eigendecomposition `H = V diag(λ) V*` with ascending `λ`.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

pub fn eigh(h: &HermitianMatrix) -> Eigh {
    let n = h.dim();
    let se = h.0.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let values = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vectors = zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    Eigh { values, vectors }
}

pub fn eigvalsh(h: &HermitianMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = h.0.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Applies a real function through the spectral theorem: `V f(λ) V*`.
pub fn spectral_map(h: &HermitianMatrix, f: impl Fn(f64) -> f64) -> ComplexMatrix {
    let Eigh { values, vectors } = eigh(h);
    let mut scaled = vectors.clone();
    for (j, &l) in values.iter().enumerate() {
        let fl = f(l);
        scaled.column_mut(j).iter_mut().for_each(|z| *z *= fl);
    }
    scaled * vectors.adjoint()
}

/// `exp(i·H)` for Hermitian `H`; unitary.
pub fn expi(h: &HermitianMatrix) -> ComplexMatrix {
    let Eigh { values, vectors } = eigh(h);
    let mut scaled = vectors.clone();
    for (j, &l) in values.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, l);
        scaled.column_mut(j).iter_mut().for_each(|z| *z *= phase);
    }
    scaled * vectors.adjoint()
}

/// Positive semidefinite square root; eigenvalues in `[−psd_tol, 0)` are
/// clamped to zero.
pub fn psd_sqrt(h: &HermitianMatrix, psd_tol: f64) -> Result<HermitianMatrix> {
    let eig = eigh(h);
    let min = eig.values[0];
    if min < -psd_tol {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let root = spectral_map(h, |l| l.max(0.0).sqrt());
    Ok(HermitianMatrix::hermitian_part(&root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn arb_matrix(n: usize) -> impl Strategy<Value = ComplexMatrix> {
        prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), n * n)
            .prop_map(move |v| ComplexMatrix::from_iterator(n, n, v.into_iter().map(|(a, b)| c(a, b))))
    }

    fn unitary_from(m: &ComplexMatrix) -> ComplexMatrix {
        m.clone().qr().q()
    }

    #[test]
    fn transpose_examples() {
        assert_eq!(transpose(&identity(3)), identity(3));
        let m = from_real(2, 2, &[0.0, 0.3, -0.3, 0.0]);
        assert_eq!(transpose(&m), from_real(2, 2, &[0.0, -0.3, 0.3, 0.0]));
    }

    #[test]
    fn conjugate_and_adjoint_examples() {
        let real = from_real(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(conjugate(&real), real);
        let m = ComplexMatrix::from_element(1, 1, c(0.0, 1.0));
        assert_eq!(adjoint(&m)[(0, 0)], c(0.0, -1.0));
    }

    #[test]
    fn hs_norm_examples() {
        assert_eq!(hs_norm(&zeros(3)), 0.0);
        let m = from_real(2, 2, &[0.0, 0.3, -0.3, 0.0]);
        assert!((hs_norm(&m) - 0.18f64.sqrt()).abs() < 1e-15);
        assert!((hs_norm(&m) - 0.424264).abs() < 1e-6);
        let mut g = ComplexMatrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                g[(i, j)] = c((i * 3 + j) as f64 * 0.1, (i as f64 - j as f64) * 0.2);
            }
        }
        let u = unitary_from(&(g + identity(4)));
        assert!((hs_norm(&u) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eigh_examples() {
        let h = HermitianMatrix::from_diagonal(&[2.0, 1.0]);
        assert_eq!(eigh(&h).values, vec![1.0, 2.0]);
        let x = HermitianMatrix::new(from_real(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let v = eigh(&x).values;
        assert!((v[0] + 1.0).abs() < 1e-14 && (v[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = from_real(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        match HermitianMatrix::new(m) {
            Err(Error::InvariantViolation { name, .. }) => assert_eq!(name, "hermitian"),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn psd_sqrt_examples() {
        let i = HermitianMatrix::identity(3);
        let r = psd_sqrt(&i, 1e-9).unwrap();
        assert!(hs_norm(&(r.matrix() - identity(3))) < 1e-14);
        let d = HermitianMatrix::from_diagonal(&[25.0, 4.0]);
        let r = psd_sqrt(&d, 1e-9).unwrap();
        let expect = HermitianMatrix::from_diagonal(&[5.0, 2.0]);
        assert!(hs_norm(&(r.matrix() - expect.matrix())) < 1e-14);
    }

    #[test]
    fn psd_sqrt_clamps_and_rejects() {
        let tiny = HermitianMatrix::from_diagonal(&[1.0, -1e-12]);
        let r = psd_sqrt(&tiny, 1e-9).unwrap();
        assert!(r.min_eigenvalue() >= 0.0);
        let neg = HermitianMatrix::from_diagonal(&[1.0, -1e-3]);
        assert!(matches!(psd_sqrt(&neg, 1e-9), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn op_norm_of_diagonal() {
        let m = from_real(2, 2, &[-3.0, 0.0, 0.0, 2.0]);
        assert!((op_norm(&m) - 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn involutions_are_exact(m in arb_matrix(4)) {
            prop_assert_eq!(transpose(&transpose(&m)), m.clone());
            prop_assert_eq!(adjoint(&adjoint(&m)), m.clone());
            prop_assert_eq!(conjugate(&conjugate(&m)), m.clone());
            prop_assert_eq!(adjoint(&m), transpose(&conjugate(&m)));
            prop_assert_eq!(adjoint(&m), conjugate(&transpose(&m)));
        }

        #[test]
        fn hs_norm_is_conjugation_invariant(m in arb_matrix(5)) {
            let n = hs_norm(&m);
            let scale = n.max(1e-300);
            prop_assert!((hs_norm(&transpose(&m)) - n).abs() <= 1e-14 * scale);
            prop_assert!((hs_norm(&conjugate(&m)) - n).abs() <= 1e-14 * scale);
            prop_assert!((hs_norm(&adjoint(&m)) - n).abs() <= 1e-14 * scale);
        }

        #[test]
        fn hs_norm_is_unitarily_invariant(m in arb_matrix(4), a in arb_matrix(4), b in arb_matrix(4)) {
            let u = unitary_from(&(a + identity(4).scale(3.0)));
            let v = unitary_from(&(b + identity(4).scale(3.0)));
            let n = hs_norm(&m);
            prop_assert!((hs_norm(&(&u * &m * &v)) - n).abs() <= 1e-12 * n.max(1e-300));
        }

        #[test]
        fn eigh_reconstructs(m in arb_matrix(6)) {
            let h = HermitianMatrix::hermitian_part(&m);
            let Eigh { values, vectors } = eigh(&h);
            prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
            let lam = ComplexMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                6, values.iter().map(|&l| c(l, 0.0))));
            let scale = hs_norm(h.matrix()).max(1.0);
            prop_assert!(hs_norm(&(h.matrix() * &vectors - &vectors * &lam)) <= 1e-10 * scale);
            prop_assert!(hs_norm(&(vectors.adjoint() * &vectors - identity(6))) <= 1e-12);
        }

        #[test]
        fn psd_sqrt_squares_back(a in arb_matrix(5)) {
            let h = HermitianMatrix::hermitian_part(&(a.adjoint() * &a));
            prop_assert!(h.min_eigenvalue() >= -1e-10 * hs_norm(h.matrix()).max(1.0));
            let r = psd_sqrt(&h, 1e-9).unwrap();
            let resid = hs_norm(&(r.matrix() * r.matrix() - h.matrix()));
            prop_assert!(resid <= 1e-9 * hs_norm(h.matrix()).max(1.0));
        }
    }
}
