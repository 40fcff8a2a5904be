//! Exact Fock-space representation of `n` fermionic modes via Jordan–Wigner.
//!
//! Basis vectors are bit strings `s ∈ [0, 2ⁿ)`; mode `k` (0-based) is occupied
//! when bit `k` is set, and the vacuum is `s = 0`. The annihilator picks up the
//! sign `(−1)^{#occupied modes below k}`.

use std::collections::BTreeMap;

use log::debug;
use num_complex::Complex64;

use crate::diagonalizer::DiagonalizationResult;
use crate::error::{Error, Result};
use crate::linalg::{eigvalsh, hs_norm, op_norm, ComplexMatrix, HermitianMatrix, ONE, ZERO};
use crate::model::QuadraticModel;

pub const MAX_FOCK_MODES: usize = 12;
pub const CAR_TOL: f64 = 1e-13;

/// Row-sparse square operator on Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    dim: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl FockOperator {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            rows: vec![Vec::new(); dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self {
            dim: diag.len(),
            rows: diag
                .iter()
                .enumerate()
                .map(|(i, &d)| if d == 0.0 { vec![] } else { vec![(i, Complex64::from(d))] })
                .collect(),
        }
    }

    /// Sums repeated `(row, col)` entries and drops exact zeros.
    pub fn from_triplets(dim: usize, entries: impl IntoIterator<Item = (usize, usize, Complex64)>) -> Self {
        let mut acc: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); dim];
        for (i, j, v) in entries {
            assert!(i < dim && j < dim, "entry ({i},{j}) outside dimension {dim}");
            *acc[i].entry(j).or_insert(ZERO) += v;
        }
        Self::from_rows(dim, acc)
    }

    fn from_rows(dim: usize, acc: Vec<BTreeMap<usize, Complex64>>) -> Self {
        Self {
            dim,
            rows: acc
                .into_iter()
                .map(|r| r.into_iter().filter(|(_, v)| *v != ZERO).collect())
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map_or(ZERO, |p| self.rows[i][p].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, v)| (i, j, v)))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(i, j, v)| (j, i, v.conj())))
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(i, j, v)| (i, j, v * s)))
    }

    pub fn add(&self, other: &Self) -> Self {
        self.lin_comb(ONE, other, ONE)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.lin_comb(ONE, other, -ONE)
    }

    /// `α·self + β·other`.
    pub fn lin_comb(&self, alpha: Complex64, other: &Self, beta: Complex64) -> Self {
        assert_eq!(self.dim, other.dim);
        Self::from_triplets(
            self.dim,
            self.iter()
                .map(|(i, j, v)| (i, j, alpha * v))
                .chain(other.iter().map(|(i, j, v)| (i, j, beta * v))),
        )
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let acc = self
            .rows
            .iter()
            .map(|row| {
                let mut out = BTreeMap::new();
                for &(k, a) in row {
                    for &(j, b) in &other.rows[k] {
                        *out.entry(j).or_insert(ZERO) += a * b;
                    }
                }
                out
            })
            .collect();
        Self::from_rows(self.dim, acc)
    }

    pub fn hs_norm(&self) -> f64 {
        self.iter().map(|(_, _, v)| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn hermiticity_residual(&self) -> f64 {
        self.sub(&self.adjoint()).hs_norm()
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        let mut col = vec![ZERO; self.dim];
        for (i, jj, v) in self.iter() {
            if jj == j {
                col[i] = v;
            }
        }
        col
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn to_hermitian(&self, tol: f64) -> Result<HermitianMatrix> {
        HermitianMatrix::with_tol(self.to_dense(), tol)
    }
}

/// `(−1)^{popcount(s & (2ᵏ − 1))}`.
pub fn jw_sign(s: usize, k: usize) -> f64 {
    if (s & ((1usize << k) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `a_k|s⟩` as `(sign, s')`, or `None` if mode `k` is empty.
fn annihilate(s: usize, k: usize) -> Option<(f64, usize)> {
    (s >> k & 1 == 1).then(|| (jw_sign(s, k), s ^ (1 << k)))
}

/// `a_k*|s⟩` as `(sign, s')`, or `None` if mode `k` is occupied.
fn create(s: usize, k: usize) -> Option<(f64, usize)> {
    (s >> k & 1 == 0).then(|| (jw_sign(s, k), s | (1 << k)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockRep {
    pub n_modes: usize,
    pub dim_fock: usize,
    pub annihilators: Vec<FockOperator>,
    /// Diagonal of `N` in the occupation basis.
    pub number_diag: Vec<f64>,
}

pub fn build_fock(n_modes: usize) -> Result<FockRep> {
    if n_modes == 0 || n_modes > MAX_FOCK_MODES {
        return Err(Error::DimTooLarge {
            n_modes,
            cap: MAX_FOCK_MODES,
        });
    }
    let dim = 1usize << n_modes;
    let annihilators = (0..n_modes)
        .map(|k| {
            FockOperator::from_triplets(
                dim,
                (0..dim).filter_map(|s| annihilate(s, k).map(|(sg, t)| (t, s, Complex64::from(sg)))),
            )
        })
        .collect();
    let number_diag = (0..dim).map(|s| s.count_ones() as f64).collect();
    Ok(FockRep {
        n_modes,
        dim_fock: dim,
        annihilators,
        number_diag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarResiduals {
    /// `max ‖a_k a_l + a_l a_k‖₂`.
    pub anti: f64,
    /// `max ‖a_k a_l* + a_l* a_k − δ_kl‖₂`.
    pub canonical: f64,
    /// `‖N − Σ a_k* a_k‖₂`.
    pub number: f64,
}

impl CarResiduals {
    pub fn max(&self) -> f64 {
        self.anti.max(self.canonical).max(self.number)
    }
}

impl FockRep {
    pub fn annihilator(&self, k: usize) -> &FockOperator {
        &self.annihilators[k]
    }

    pub fn creator(&self, k: usize) -> FockOperator {
        self.annihilators[k].adjoint()
    }

    pub fn number_op(&self) -> FockOperator {
        FockOperator::from_diagonal(&self.number_diag)
    }

    pub fn number_op_dense(&self) -> HermitianMatrix {
        HermitianMatrix::from_diagonal(&self.number_diag)
    }

    /// `(N + 1)⁻¹` as a diagonal operator.
    pub fn resolvent_n(&self) -> FockOperator {
        FockOperator::from_diagonal(&self.number_diag.iter().map(|x| 1.0 / (x + 1.0)).collect::<Vec<_>>())
    }

    pub fn vacuum(&self) -> Vec<Complex64> {
        let mut v = vec![ZERO; self.dim_fock];
        v[0] = ONE;
        v
    }

    pub fn car_residuals(&self) -> CarResiduals {
        let n = self.n_modes;
        let id = FockOperator::identity(self.dim_fock);
        let creators: Vec<_> = (0..n).map(|k| self.creator(k)).collect();
        let mut anti = 0.0f64;
        let mut canonical = 0.0f64;
        let mut number = self.number_op();
        for k in 0..n {
            let ak = &self.annihilators[k];
            for l in 0..n {
                let al = &self.annihilators[l];
                anti = anti.max(ak.mul(al).add(&al.mul(ak)).hs_norm());
                let mut c = ak.mul(&creators[l]).add(&creators[l].mul(ak));
                if k == l {
                    c = c.sub(&id);
                }
                canonical = canonical.max(c.hs_norm());
            }
            number = number.sub(&creators[k].mul(ak));
        }
        CarResiduals {
            anti,
            canonical,
            number: number.hs_norm(),
        }
    }

    fn check_dim(&self, op: &'static str, n: usize) -> Result<()> {
        if n != self.n_modes {
            return Err(Error::DimensionMismatch {
                op,
                expected: self.n_modes,
                got: n,
            });
        }
        Ok(())
    }
}

/// `Σ M_kl a_k* a_l` for an arbitrary square `M`.
pub fn second_quantize(rep: &FockRep, m: &ComplexMatrix) -> Result<FockOperator> {
    rep.check_dim("second_quantize", m.nrows())?;
    rep.check_dim("second_quantize", m.ncols())?;
    let n = rep.n_modes;
    let mut entries = Vec::new();
    for s in 0..rep.dim_fock {
        for l in 0..n {
            let Some((s1, t1)) = annihilate(s, l) else { continue };
            for k in 0..n {
                let c = m[(k, l)];
                if c == ZERO {
                    continue;
                }
                if let Some((s2, t2)) = create(t1, k) {
                    entries.push((t2, s, c * (s1 * s2)));
                }
            }
        }
    }
    Ok(FockOperator::from_triplets(rep.dim_fock, entries))
}

/// `Σ D_kl a_k* a_l*`.
pub fn pairing_creation(rep: &FockRep, d: &ComplexMatrix) -> Result<FockOperator> {
    rep.check_dim("pairing_creation", d.nrows())?;
    rep.check_dim("pairing_creation", d.ncols())?;
    let n = rep.n_modes;
    let mut entries = Vec::new();
    for s in 0..rep.dim_fock {
        for l in 0..n {
            let Some((s1, t1)) = create(s, l) else { continue };
            for k in 0..n {
                let c = d[(k, l)];
                if c == ZERO {
                    continue;
                }
                if let Some((s2, t2)) = create(t1, k) {
                    entries.push((t2, s, c * (s1 * s2)));
                }
            }
        }
    }
    Ok(FockOperator::from_triplets(rep.dim_fock, entries))
}

/// `Σ D̄_kl a_l a_k`, the adjoint of [`pairing_creation`].
pub fn pairing_annihilation(rep: &FockRep, d: &ComplexMatrix) -> Result<FockOperator> {
    rep.check_dim("pairing_annihilation", d.nrows())?;
    rep.check_dim("pairing_annihilation", d.ncols())?;
    let n = rep.n_modes;
    let mut entries = Vec::new();
    for s in 0..rep.dim_fock {
        for k in 0..n {
            let Some((s1, t1)) = annihilate(s, k) else { continue };
            for l in 0..n {
                let c = d[(k, l)];
                if c == ZERO {
                    continue;
                }
                if let Some((s2, t2)) = annihilate(t1, l) {
                    entries.push((t2, s, c.conj() * (s1 * s2)));
                }
            }
        }
    }
    Ok(FockOperator::from_triplets(rep.dim_fock, entries))
}

/// `Σ Υ_kl a_k*a_l + D_kl a_k*a_l* + D̄_kl a_l a_k + E·1` for arbitrary
/// coefficient matrices.
pub fn assemble_quadratic(
    rep: &FockRep,
    upsilon: &ComplexMatrix,
    d: &ComplexMatrix,
    e0: f64,
) -> Result<FockOperator> {
    let one_body = second_quantize(rep, upsilon)?;
    let pairs = pairing_creation(rep, d)?.add(&pairing_annihilation(rep, d)?);
    let constant = FockOperator::identity(rep.dim_fock).scaled(Complex64::from(e0));
    Ok(one_body.add(&pairs).add(&constant))
}

pub fn assemble_h0(model: &QuadraticModel, rep: &FockRep) -> Result<FockOperator> {
    rep.check_dim("assemble_h0", model.dim())?;
    let h = assemble_quadratic(rep, model.upsilon0.matrix(), model.d0.matrix(), model.e0)?;
    let scale = h.hs_norm().max(1.0);
    let res = h.hermiticity_residual() / scale;
    if res > 1e-10 {
        return Err(Error::InvariantViolation {
            name: "assembled H0 hermitian".into(),
            residual: res,
        });
    }
    Ok(h)
}

/// Ascending spectrum of a Hermitian Fock operator.
pub fn fock_spectrum(op: &FockOperator) -> Vec<f64> {
    eigvalsh(&HermitianMatrix::hermitian_part(&op.to_dense()))
}

/// `{offset + Σ_{k∈S} λ_k : S ⊆ {1..n}}`, sorted.
pub fn subset_sums(lambdas: &[f64], offset: f64) -> Vec<f64> {
    let n = lambdas.len();
    let mut out: Vec<f64> = (0..1usize << n)
        .map(|s| offset + (0..n).filter(|k| s >> k & 1 == 1).map(|k| lambdas[k]).sum::<f64>())
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// `‖(H₀ − E₀)Ψ‖` and `√2‖D₀‖₂`.
pub fn vacuum_identity(model: &QuadraticModel, rep: &FockRep) -> Result<(f64, f64)> {
    let h = assemble_h0(model, rep)?;
    let mut col = h.column(0);
    col[0] -= Complex64::from(model.e0);
    let lhs = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok((lhs, 2f64.sqrt() * hs_norm(model.d0.matrix())))
}

/// `‖[A, N]‖₂`, using that `N` is diagonal.
pub fn number_commutator(op: &FockOperator, rep: &FockRep) -> f64 {
    op.iter()
        .map(|(i, j, v)| (v * (rep.number_diag[j] - rep.number_diag[i])).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Max absolute deviation between the sorted spectrum of the assembled `H₀`
/// and the subset sums predicted by `(Υ∞, e_inf)`.
pub fn spectrum_compare(result: &DiagonalizationResult, model: &QuadraticModel, rep: &FockRep) -> Result<f64> {
    if !result.diagnostics.converged {
        return Err(Error::NotConverged {
            op: "spectrum_compare",
            t_final: result.diagnostics.t_final,
            d_norm: result.diagnostics.final_d_norm,
        });
    }
    rep.check_dim("spectrum_compare", result.upsilon_inf.dim())?;
    let exact = fock_spectrum(&assemble_h0(model, rep)?);
    let predicted = subset_sums(&eigvalsh(&result.upsilon_inf), result.e_inf);
    let dev = exact
        .iter()
        .zip(&predicted)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    debug!("spectrum_compare: n = {}, deviation {dev:.3e}", rep.n_modes);
    Ok(dev)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeBounds {
    /// `‖𝐃(N+1)⁻¹‖_op / ‖D₀‖₂`.
    pub ratio1: f64,
    /// `‖𝐃*(N+1)⁻¹‖_op / (√3‖D₀‖₂)`.
    pub ratio2: f64,
    /// `‖dΓ(Δ)(N+1)⁻¹‖_op / (√2‖Δ‖₂)`.
    pub ratio3: f64,
    pub b1: bool,
    pub b2: bool,
    pub b3: bool,
}

impl RelativeBounds {
    pub fn all(&self) -> bool {
        self.b1 && self.b2 && self.b3
    }
}

pub const RELATIVE_BOUNDS_MAX_MODES: usize = 10;

fn bound_ratio(lhs: f64, rhs: f64) -> (f64, bool) {
    let slack = 1e-12 * rhs.max(1.0);
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs <= slack { 0.0 } else { f64::INFINITY };
    (ratio, lhs <= rhs + slack)
}

/// Checks the three relative bounds of the pairing and one-body parts
/// against `N + 1`, with `Δ` typically `Δ∞` from a converged run.
pub fn relative_bounds_check(model: &QuadraticModel, rep: &FockRep, delta: &ComplexMatrix) -> Result<RelativeBounds> {
    if rep.n_modes > RELATIVE_BOUNDS_MAX_MODES {
        return Err(Error::DimTooLarge {
            n_modes: rep.n_modes,
            cap: RELATIVE_BOUNDS_MAX_MODES,
        });
    }
    rep.check_dim("relative_bounds_check", model.dim())?;
    let d = model.d0.matrix();
    let res = rep.resolvent_n();
    let dd = pairing_annihilation(rep, d)?;
    let dd_star = pairing_creation(rep, d)?;
    let gamma = second_quantize(rep, delta)?;
    let d2 = hs_norm(d);
    let (ratio1, b1) = bound_ratio(op_norm(&dd.mul(&res).to_dense()), d2);
    let (ratio2, b2) = bound_ratio(op_norm(&dd_star.mul(&res).to_dense()), 3f64.sqrt() * d2);
    let (ratio3, b3) = bound_ratio(op_norm(&gamma.mul(&res).to_dense()), 2f64.sqrt() * hs_norm(delta));
    Ok(RelativeBounds {
        ratio1,
        ratio2,
        ratio3,
        b1,
        b2,
        b3,
    })
}
