//! Bogoliubov coefficients `(u, v)` implementing the flow on the doubled
//! one-particle space, and the checks that tie them to the flow.
//!
//! The pair solves `∂ₜu = 4Dₜv̄`, `∂ₜv = 4Dₜū` from `(1, 0)`, equivalently
//! `∂ₜU = KₜU` for the block unitary `U = [[u, v],[v̄, ū]]` and the
//! anti-Hermitian generator `Kₜ = [[0, 4Dₜ],[−4Dₜ*, 0]]`. The self-dual
//! Hamiltonian then moves along the unitary orbit `hₜ = U h₀ U*`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::flow::{self, block_unitary, FlowState, IntegrateOptions, Integration};
use crate::linalg::{hs_norm, identity, zeros, ComplexMatrix, HermitianMatrix};
use crate::model::QuadraticModel;

#[derive(Debug, Clone, PartialEq)]
pub struct BogoliubovPair {
    pub u: ComplexMatrix,
    pub v: ComplexMatrix,
    pub t_from: f64,
    pub t_to: f64,
}

impl BogoliubovPair {
    pub fn identity(n: usize) -> Self {
        Self {
            u: identity(n),
            v: zeros(n),
            t_from: 0.0,
            t_to: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// `U = [[u, v],[v̄, ū]]`.
    pub fn block_unitary(&self) -> ComplexMatrix {
        block_unitary(&self.u, &self.v)
    }
}

/// `h = ½[[Υ, 2D],[2D*, −Υᵀ]]` on `𝔥 ⊕ 𝔥`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfDualMatrix(HermitianMatrix);

impl SelfDualMatrix {
    pub fn from_blocks(upsilon: &ComplexMatrix, d: &ComplexMatrix) -> Self {
        let n = upsilon.nrows();
        let mut h = zeros(2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&upsilon.scale(0.5));
        h.view_mut((0, n), (n, n)).copy_from(d);
        h.view_mut((n, 0), (n, n)).copy_from(&d.adjoint());
        h.view_mut((n, n), (n, n)).copy_from(&upsilon.transpose().scale(-0.5));
        Self(HermitianMatrix::hermitian_part(&h))
    }

    pub fn hermitian(&self) -> &HermitianMatrix {
        &self.0
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        self.0.matrix()
    }

    /// `‖h + 𝔄h𝔄‖₂` where `𝔄(x, y) = (ȳ, x̄)`; zero for a self-dual `h`.
    pub fn self_duality_residual(&self) -> f64 {
        let h = self.matrix();
        let n = h.nrows() / 2;
        // 𝔄[[a, b],[c, d]]𝔄 = [[d̄, c̄],[b̄, ā]]
        let mut flipped = zeros(2 * n);
        let conj = |r: usize, c: usize| h.view((r, c), (n, n)).map(|z| z.conj());
        flipped.view_mut((0, 0), (n, n)).copy_from(&conj(n, n));
        flipped.view_mut((0, n), (n, n)).copy_from(&conj(n, 0));
        flipped.view_mut((n, 0), (n, n)).copy_from(&conj(0, n));
        flipped.view_mut((n, n), (n, n)).copy_from(&conj(0, 0));
        hs_norm(&(h + flipped))
    }
}

pub fn build_self_dual(model: &QuadraticModel) -> SelfDualMatrix {
    SelfDualMatrix::from_blocks(model.upsilon0.matrix(), model.d0.matrix())
}

/// Runs the flow with `(u, v)` stepped inside the same adaptive integrator.
pub fn co_integrate_uv(model: &QuadraticModel, opts: &IntegrateOptions) -> Result<Integration> {
    let opts = IntegrateOptions {
        co_integrate_uv: true,
        ..opts.clone()
    };
    flow::integrate(model, &opts)
}

/// Truncated Dyson series for `(u, v)` along a sampled path `(tₖ, D_{tₖ})`
/// starting at the first sample.
///
/// The series is summed as Picard iteration of the `(u, v)` equations with
/// cumulative trapezoid quadrature, which reproduces the nested trapezoid
/// evaluation of the iterated integrals term by term. `order` counts the
/// retained terms beyond the leading one: `v` keeps up to `2·order + 1`
/// integrals and `u` up to `2·order`.
pub fn dyson_uv(path: &[(f64, ComplexMatrix)], order: usize) -> BogoliubovPair {
    assert!(!path.is_empty(), "dyson_uv: empty path");
    let n = path[0].1.nrows();
    let m = path.len();
    let mut u: Vec<ComplexMatrix> = vec![identity(n); m];
    let mut v: Vec<ComplexMatrix> = vec![zeros(n); m];
    let four = Complex64::new(4.0, 0.0);
    for _ in 0..(2 * order + 1) {
        let mut nu = Vec::with_capacity(m);
        let mut nv = Vec::with_capacity(m);
        nu.push(identity(n));
        nv.push(zeros(n));
        let integrand_u = |k: usize| &path[k].1 * v[k].map(|z| z.conj());
        let integrand_v = |k: usize| &path[k].1 * u[k].map(|z| z.conj());
        let (mut prev_u, mut prev_v) = (integrand_u(0), integrand_v(0));
        for k in 1..m {
            let dt = Complex64::new(0.5 * (path[k].0 - path[k - 1].0), 0.0);
            let (cu, cv) = (integrand_u(k), integrand_v(k));
            let next_u = &nu[k - 1] + (&prev_u + &cu) * dt * four;
            let next_v = &nv[k - 1] + (&prev_v + &cv) * dt * four;
            nu.push(next_u);
            nv.push(next_v);
            prev_u = cu;
            prev_v = cv;
        }
        u = nu;
        v = nv;
    }
    BogoliubovPair {
        u: u.pop().expect("nonempty"),
        v: v.pop().expect("nonempty"),
        t_from: path[0].0,
        t_to: path[m - 1].0,
    }
}

/// HS norms of the four Bogoliubov identity residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BogoliubovResiduals {
    /// `u*u + vᵀv̄ − 1`
    pub r1: f64,
    /// `u*v + vᵀū`
    pub r2: f64,
    /// `uu* + vv* − 1`
    pub r3: f64,
    /// `uvᵀ + vuᵀ`
    pub r4: f64,
}

impl BogoliubovResiduals {
    pub fn max(&self) -> f64 {
        self.r1.max(self.r2).max(self.r3).max(self.r4)
    }
}

pub fn bogoliubov_residuals(pair: &BogoliubovPair) -> BogoliubovResiduals {
    let (u, v) = (&pair.u, &pair.v);
    let n = u.nrows();
    let one = identity(n);
    let ubar = u.map(|z| z.conj());
    let vbar = v.map(|z| z.conj());
    BogoliubovResiduals {
        r1: hs_norm(&(u.adjoint() * u + v.transpose() * &vbar - &one)),
        r2: hs_norm(&(u.adjoint() * v + v.transpose() * &ubar)),
        // The CAR fix the relative sign to `+`: these two blocks are the
        // diagonal of UU* = 1.
        r3: hs_norm(&(u * u.adjoint() + v * v.adjoint() - &one)),
        r4: hs_norm(&(u * v.transpose() + v * u.transpose())),
    }
}

/// `‖hₜ − U h₀ U*‖₂` for the pair computed along the same trajectory.
pub fn orbit_residual(
    pair: &BogoliubovPair,
    model: &QuadraticModel,
    state: &FlowState,
) -> Result<f64> {
    if pair.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            op: "orbit_residual",
            expected: model.dim(),
            got: pair.dim(),
        });
    }
    let y = flow::upsilon_t(state, model)?;
    let ht = SelfDualMatrix::from_blocks(y.matrix(), state.d.matrix());
    let h0 = build_self_dual(model);
    let big = pair.block_unitary();
    Ok(hs_norm(&(ht.matrix() - &big * h0.matrix() * big.adjoint())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShaleStinespring {
    pub v_hs_norm: f64,
    /// Always true in finite dimension, where every `v` is Hilbert-Schmidt;
    /// the norm is the informative part.
    pub implementable: bool,
}

pub fn shale_stinespring(pair: &BogoliubovPair) -> ShaleStinespring {
    let v_hs_norm = hs_norm(&pair.v);
    ShaleStinespring {
        v_hs_norm,
        implementable: v_hs_norm.is_finite(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigvalsh, from_real, PairingMatrix};

    fn bcs_like(a: f64, g: f64) -> QuadraticModel {
        let h = g / 2.0;
        let d = from_real(
            4,
            4,
            &[0.0, 0.0, 0.0, h, 0.0, 0.0, h, 0.0, 0.0, -h, 0.0, 0.0, -h, 0.0, 0.0, 0.0],
        );
        QuadraticModel::new(
            HermitianMatrix::identity(4).scaled(a),
            PairingMatrix::new(d).unwrap(),
            0.0,
        )
        .unwrap()
    }

    fn noncommuting() -> QuadraticModel {
        QuadraticModel::new(
            HermitianMatrix::from_diagonal(&[1.0, 2.0]),
            PairingMatrix::new(from_real(2, 2, &[0.0, 0.3, -0.3, 0.0])).unwrap(),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn self_dual_without_pairing() {
        let m = QuadraticModel::new(
            HermitianMatrix::from_diagonal(&[1.0, 2.0]),
            PairingMatrix::zeros(2),
            0.0,
        )
        .unwrap();
        let h = build_self_dual(&m);
        let expect = HermitianMatrix::from_diagonal(&[0.5, 1.0, -0.5, -1.0]);
        assert_eq!(h.matrix(), expect.matrix());
        assert_eq!(h.self_duality_residual(), 0.0);
    }

    #[test]
    fn self_dual_bcs_spectrum() {
        let h = build_self_dual(&bcs_like(3.0, 2.0));
        assert!(h.self_duality_residual() < 1e-15);
        let half = 13f64.sqrt() / 2.0;
        let ev = eigvalsh(h.hermitian());
        for (i, l) in ev.iter().enumerate() {
            let expect = if i < 4 { -half } else { half };
            assert!((l - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_pair_has_zero_residuals() {
        let r = bogoliubov_residuals(&BogoliubovPair::identity(3));
        assert_eq!(r.max(), 0.0);
        assert_eq!(shale_stinespring(&BogoliubovPair::identity(3)).v_hs_norm, 0.0);
    }

    #[test]
    fn perturbed_pair_is_detected() {
        let mut pair = BogoliubovPair::identity(2);
        let e = from_real(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        pair.u += e.scale(1e-3);
        let r = bogoliubov_residuals(&pair);
        // (1+δ)² − 1 = 2δ + δ²
        assert!((r.r1 - (2e-3 + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn verbatim_bosonic_sign_fails_on_a_real_run() {
        let m = bcs_like(3.0, 2.0);
        let run = co_integrate_uv(&m, &IntegrateOptions::default()).unwrap();
        let pair = run.pair.unwrap();
        let (u, v) = (&pair.u, &pair.v);
        let verbatim = hs_norm(&(u * u.adjoint() - v * v.adjoint() - identity(4)));
        let vv = hs_norm(&(v * v.adjoint()));
        assert!((verbatim - 2.0 * vv).abs() < 1e-8);
        assert!(verbatim > 0.1);
        assert!(bogoliubov_residuals(&pair).r3 < 1e-8);
    }

    #[test]
    fn pair_without_pairing_is_identity() {
        let m = QuadraticModel::new(
            HermitianMatrix::from_diagonal(&[1.0, 2.0]),
            PairingMatrix::zeros(2),
            0.0,
        )
        .unwrap();
        let run = co_integrate_uv(&m, &IntegrateOptions::default()).unwrap();
        let pair = run.pair.unwrap();
        assert_eq!(pair.u, identity(2));
        assert_eq!(pair.v, zeros(2));
    }

    #[test]
    fn short_time_v_is_linear_in_d0() {
        let m = noncommuting();
        let t = 1e-3;
        let opts = IntegrateOptions {
            t_max: Some(t),
            d_tol: 0.0,
            ..Default::default()
        };
        let run = co_integrate_uv(&m, &opts).unwrap();
        let pair = run.pair.unwrap();
        assert!((pair.t_to - t).abs() < 1e-15);
        // v = 4∫D = 4tD₀ + O(t²) from the drift of D itself.
        let lead = m.d0.matrix().scale(4.0 * t);
        assert!(hs_norm(&(&pair.v - &lead)) < 10.0 * t * t);
    }

    #[test]
    fn bcs_coherence_factors() {
        let m = bcs_like(3.0, 2.0);
        let run = co_integrate_uv(&m, &IntegrateOptions::default()).unwrap();
        let pair = run.pair.unwrap();
        let lambda = 13f64.sqrt();
        let u_sq = 0.5 * (1.0 + 3.0 / lambda);
        let v_sq = 0.5 * (1.0 - 3.0 / lambda);
        for i in 0..4 {
            let row_u: f64 = (0..4).map(|j| pair.u[(i, j)].norm_sqr()).sum();
            let row_v: f64 = (0..4).map(|j| pair.v[(i, j)].norm_sqr()).sum();
            assert!((row_u - u_sq).abs() < 1e-6);
            assert!((row_v - v_sq).abs() < 1e-6);
        }
        let ss = shale_stinespring(&pair);
        assert!((ss.v_hs_norm.powi(2) - 4.0 * v_sq).abs() < 1e-6);
        assert!(ss.implementable);
        assert!(ss.v_hs_norm <= (4.0 * run.final_state.d_norm_integral).sinh());
    }

    #[test]
    fn dyson_constant_path() {
        let d0 = from_real(2, 2, &[0.0, 0.3, -0.3, 0.0]);
        let path: Vec<_> = (0..11).map(|k| (k as f64 * 0.01, d0.clone())).collect();
        let p = dyson_uv(&path, 0);
        assert!(hs_norm(&(p.v - d0.scale(0.4))) < 1e-15);
        assert_eq!(p.u, identity(2));
        let zero: Vec<_> = (0..5).map(|k| (k as f64, zeros(3))).collect();
        for order in 0..4 {
            let p = dyson_uv(&zero, order);
            assert_eq!(p.u, identity(3));
            assert_eq!(p.v, zeros(3));
        }
    }

    #[test]
    fn dyson_matches_co_integration() {
        let m = noncommuting();
        // 4∫‖D‖₂ ≈ 4·0.2·‖D₀‖₂ ≈ 0.34
        let t_end = 0.2;
        let opts = IntegrateOptions {
            t_max: Some(t_end),
            d_tol: 0.0,
            max_step: Some(t_end / 2000.0),
            record_snapshots: true,
            ..Default::default()
        };
        let run = co_integrate_uv(&m, &opts).unwrap();
        let path: Vec<_> = run
            .snapshots
            .iter()
            .map(|s| (s.state.t, s.state.d.matrix().clone()))
            .collect();
        let dy = dyson_uv(&path, 3);
        let pair = run.pair.unwrap();
        let a = 4.0 * run.final_state.d_norm_integral;
        assert!(a <= 0.5);
        assert!(hs_norm(&(&dy.u - &pair.u)) < 1e-6);
        assert!(hs_norm(&(&dy.v - &pair.v)) < 1e-6);
        // Truncation alone is bounded by the sinh tail past the 7th power.
        let tail = a.sinh() - (a + a.powi(3) / 6.0 + a.powi(5) / 120.0 + a.powi(7) / 5040.0);
        assert!(hs_norm(&(&dy.v - &pair.v)) <= tail + 1e-6);
    }

    #[test]
    fn orbit_residual_along_trajectory() {
        let m = noncommuting();
        let opts = IntegrateOptions {
            record_snapshots: true,
            ..Default::default()
        };
        let run = co_integrate_uv(&m, &opts).unwrap();
        let first = &run.snapshots[0];
        assert_eq!(
            orbit_residual(first.pair.as_ref().unwrap(), &m, &first.state).unwrap(),
            0.0
        );
        for snap in &run.snapshots {
            let r = orbit_residual(snap.pair.as_ref().unwrap(), &m, &snap.state).unwrap();
            assert!(r <= 1e-7, "orbit residual {r} at t = {}", snap.state.t);
            let ss = shale_stinespring(snap.pair.as_ref().unwrap());
            let a = 4.0 * snap.state.d_norm_integral;
            assert!(ss.v_hs_norm <= a.sinh() + 1e-12);
            let du = hs_norm(&(&snap.pair.as_ref().unwrap().u - identity(2)));
            assert!(du <= a.cosh() - 1.0 + 1e-12);
        }
    }

    #[test]
    fn orbit_residual_dimension_mismatch() {
        let m = noncommuting();
        let s = FlowState::initial(&m);
        assert!(matches!(
            orbit_residual(&BogoliubovPair::identity(3), &m, &s),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
