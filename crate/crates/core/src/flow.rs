//! The elliptic operator-valued flow
//!
//! ```text
//! ∂ₜΔₜ = 16 DₜDₜ*,                 Δ₀ = 0,
//! ∂ₜDₜ = −2 (ΥₜDₜ + DₜΥₜᵀ),        Υₜ = Υ₀ + Δₜ,
//! ```
//!
//! integrated until `Dₜ` vanishes. Alongside `(Δ, D)` the integrator carries
//! the energy integral `8∫‖D‖₂²`, the integral `∫‖D‖₂` used by the Bogoliubov
//! continuity bounds, and optionally the Bogoliubov pair `(u, v)`.

use log::{debug, warn};
use num_complex::Complex64;

use crate::bogoliubov::BogoliubovPair;
use crate::error::{Error, Result};
use crate::linalg::{
    eigh, expi, hs_norm, identity, op_norm, spectral_map, zeros, ComplexMatrix, HermitianMatrix,
    PairingMatrix,
};
use crate::model::QuadraticModel;

/// A point on the flow trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub delta: HermitianMatrix,
    pub d: PairingMatrix,
    /// `8∫₀ᵗ‖D_τ‖₂² dτ`.
    pub energy_integral: f64,
    /// `∫₀ᵗ‖D_τ‖₂ dτ`.
    pub d_norm_integral: f64,
    /// `tr(Υ₀² + 4D₀D₀*)`.
    pub invariant0: f64,
}

impl FlowState {
    pub fn initial(model: &QuadraticModel) -> Self {
        Self {
            t: 0.0,
            delta: HermitianMatrix::zeros(model.dim()),
            d: model.d0.clone(),
            energy_integral: 0.0,
            d_norm_integral: 0.0,
            invariant0: model.motion_baseline(),
        }
    }

    pub fn d_norm(&self) -> f64 {
        hs_norm(self.d.matrix())
    }
}

fn check_dims(op: &'static str, state: &FlowState, model: &QuadraticModel) -> Result<()> {
    if state.delta.dim() != model.dim() || state.d.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            op,
            expected: model.dim(),
            got: state.delta.dim().max(state.d.dim()),
        });
    }
    Ok(())
}

/// `Υₜ = Υ₀ + Δₜ`.
pub fn upsilon_t(state: &FlowState, model: &QuadraticModel) -> Result<HermitianMatrix> {
    check_dims("upsilon_t", state, model)?;
    Ok(HermitianMatrix::hermitian_part(
        &(model.upsilon0.matrix() + state.delta.matrix()),
    ))
}

#[derive(Debug, Clone)]
pub struct FlowRhs {
    pub delta_dot: HermitianMatrix,
    pub d_dot: ComplexMatrix,
    pub energy_dot: f64,
}

pub fn flow_rhs(state: &FlowState, model: &QuadraticModel) -> Result<FlowRhs> {
    check_dims("flow_rhs", state, model)?;
    let y = upsilon_t(state, model)?;
    let d = state.d.matrix();
    let delta_dot = (d * d.adjoint()).scale(16.0);
    let yt = y.matrix();
    let d_dot = (yt * d + d * yt.transpose()).scale(-2.0);
    Ok(FlowRhs {
        delta_dot: HermitianMatrix::hermitian_part(&delta_dot),
        d_dot,
        energy_dot: 8.0 * hs_norm(d).powi(2),
    })
}

/// `tr(Υₜ² + 4DₜDₜ*) − tr(Υ₀² + 4D₀D₀*)`.
pub fn motion_invariant(state: &FlowState, model: &QuadraticModel) -> f64 {
    let y = model.upsilon0.matrix() + state.delta.matrix();
    hs_norm(&y).powi(2) + 4.0 * state.d_norm().powi(2) - state.invariant0
}

// ---------------------------------------------------------------------------
// Spectral conditions

/// Thresholds used when testing the admissibility conditions on `(μ, ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionTolerances {
    pub cond_tol: f64,
    pub cond_cap: f64,
}

impl Default for ConditionTolerances {
    fn default() -> Self {
        Self {
            cond_tol: 1e-10,
            cond_cap: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralCondition {
    pub mu: f64,
    pub eps: f64,
    /// `inf σ(𝔇₀) − μ`, i.e. `ζ(0)`.
    pub zeta0: f64,
    pub lambda_min_upsilon: f64,
    pub feasible: bool,
}

/// `Υ + 4D(Υᵀ + μ1)⁻¹D*`.
fn elliptic_operator(
    op: &'static str,
    upsilon: &HermitianMatrix,
    d: &ComplexMatrix,
    mu: f64,
    cond_cap: f64,
) -> Result<HermitianMatrix> {
    let shifted = HermitianMatrix::hermitian_part(
        &(upsilon.matrix().transpose() + identity(upsilon.dim()).scale(mu)),
    );
    let eig = eigh(&shifted);
    let smallest = eig.values.iter().fold(f64::INFINITY, |m, &l| m.min(l.abs()));
    let largest = eig.values.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let condition = if smallest > 0.0 { largest / smallest } else { f64::INFINITY };
    if !(condition <= cond_cap) {
        return Err(Error::SingularShift { op, condition });
    }
    let inv = spectral_map(&shifted, |l| 1.0 / l);
    let m = upsilon.matrix() + (d * inv * d.adjoint()).scale(4.0);
    Ok(HermitianMatrix::hermitian_part(&m))
}

pub fn check_conditions(
    model: &QuadraticModel,
    mu: f64,
    eps: f64,
    tol: &ConditionTolerances,
) -> Result<SpectralCondition> {
    if mu == 0.0 || !mu.is_finite() {
        return Err(Error::InvariantViolation {
            name: "check_conditions: μ must be a nonzero real".into(),
            residual: mu,
        });
    }
    if !(eps > 0.0) {
        return Err(Error::InvariantViolation {
            name: "check_conditions: ε must be positive".into(),
            residual: eps,
        });
    }
    let frak_d = elliptic_operator(
        "check_conditions",
        &model.upsilon0,
        model.d0.matrix(),
        mu,
        tol.cond_cap,
    )?;
    let lambda_min_upsilon = model.upsilon0.min_eigenvalue();
    let lambda_min_frak = frak_d.min_eigenvalue();
    let slack = tol.cond_tol * mu.abs().max(1.0);
    let feasible = lambda_min_upsilon >= -(mu - eps) - slack && lambda_min_frak >= mu - slack;
    Ok(SpectralCondition {
        mu,
        eps,
        zeta0: lambda_min_frak - mu,
        lambda_min_upsilon,
        feasible,
    })
}

/// `ζ(t) = inf σ(Υₜ − μ1 + 4Dₜ(Υₜᵀ + μ1)⁻¹Dₜ*)`.
pub fn zeta(state: &FlowState, model: &QuadraticModel, mu: f64) -> Result<f64> {
    zeta_with_cap(state, model, mu, ConditionTolerances::default().cond_cap)
}

fn zeta_with_cap(state: &FlowState, model: &QuadraticModel, mu: f64, cap: f64) -> Result<f64> {
    let y = upsilon_t(state, model)?;
    let frak_d = elliptic_operator("zeta", &y, state.d.matrix(), mu, cap)?;
    Ok(frak_d.min_eigenvalue() - mu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuSearch {
    pub mu_lo: f64,
    /// Defaults to `‖Υ₀‖_op + 2‖D₀‖_op + 1`, which bounds every feasible μ.
    pub mu_hi: Option<f64>,
    pub grid_points: usize,
    pub refine_iters: usize,
}

impl Default for MuSearch {
    fn default() -> Self {
        Self {
            mu_lo: 1e-6,
            mu_hi: None,
            grid_points: 64,
            refine_iters: 40,
        }
    }
}

/// `ε = min(μ + λ_min(Υ₀), μ)/2`; `None` when that is not positive.
pub fn default_eps(mu: f64, lambda_min_upsilon: f64) -> Option<f64> {
    let eps = (mu + lambda_min_upsilon).min(mu) / 2.0;
    (eps > 0.0).then_some(eps)
}

/// Largest μ on the positive branch for which the admissibility conditions
/// hold: grid scan, then bisection on the upper boundary of the largest
/// feasible grid point.
pub fn find_max_mu(
    model: &QuadraticModel,
    search: &MuSearch,
    tol: &ConditionTolerances,
) -> Result<(f64, SpectralCondition)> {
    let lambda_min = model.upsilon0.min_eigenvalue();
    let lo = search.mu_lo;
    let hi = search.mu_hi.unwrap_or_else(|| {
        op_norm(model.upsilon0.matrix()) + 2.0 * op_norm(model.d0.matrix()) + 1.0
    });
    let probe = |mu: f64| -> Option<SpectralCondition> {
        let eps = default_eps(mu, lambda_min)?;
        match check_conditions(model, mu, eps, tol) {
            Ok(c) if c.feasible => Some(c),
            _ => None,
        }
    };
    let n = search.grid_points.max(2);
    let grid: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let Some(k) = (0..n).rev().find(|&i| probe(grid[i]).is_some()) else {
        return Err(Error::NoFeasibleMu { lo, hi });
    };
    let (mut good, mut bad) = (grid[k], grid.get(k + 1).copied());
    if let Some(mut b) = bad.take() {
        for _ in 0..search.refine_iters {
            let mid = 0.5 * (good + b);
            if probe(mid).is_some() {
                good = mid;
            } else {
                b = mid;
            }
        }
    }
    let cond = probe(good).expect("bisection keeps the feasible end");
    Ok((good, cond))
}

// ---------------------------------------------------------------------------
// Integrator

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Embedded Dormand-Prince 5(4) with adaptive steps.
    DormandPrince,
    /// Fixed-step splitting `D ← e^{−hΥ} D e^{−hΥᵀ}` with midpoint `Δ` update.
    Splitting { h: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    /// Cap on the absolute local error accepted by [`step`].
    pub err_cap: f64,
    pub max_retries: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            err_cap: 1e-8,
            max_retries: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrateOptions {
    pub d_tol: f64,
    /// Defaults to `10³/max(|μ|, 0.01)` when μ is known, else `10³`.
    pub t_max: Option<f64>,
    pub rel_err: f64,
    pub abs_err: f64,
    pub trace_every: usize,
    pub max_step: Option<f64>,
    pub max_steps: usize,
    pub mu: Option<f64>,
    pub method: Method,
    pub co_integrate_uv: bool,
    pub record_snapshots: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            d_tol: 1e-12,
            t_max: None,
            rel_err: 1e-10,
            abs_err: 1e-13,
            trace_every: 1,
            max_step: None,
            max_steps: 2_000_000,
            mu: None,
            method: Method::DormandPrince,
            co_integrate_uv: false,
            record_snapshots: false,
        }
    }
}

impl IntegrateOptions {
    pub fn effective_t_max(&self) -> f64 {
        self.t_max
            .unwrap_or_else(|| match self.mu {
                Some(mu) => 1e3 / mu.abs().max(0.01),
                None => 1e3,
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub d_hs_norm: f64,
    pub invariant_drift: f64,
    pub energy_integral: f64,
    pub zeta: Option<f64>,
}

/// Full state (and optionally the Bogoliubov pair) at a trace sample.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: FlowState,
    pub pair: Option<BogoliubovPair>,
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub final_state: FlowState,
    pub converged: bool,
    pub steps: usize,
    pub rejected: usize,
    pub trace: Vec<TraceSample>,
    pub snapshots: Vec<Snapshot>,
    pub pair: Option<BogoliubovPair>,
    /// Largest `‖(Δ − Δ*)/2‖₂` removed after an accepted step.
    pub max_hermitian_projection: f64,
    /// Largest `‖(D + Dᵀ)/2‖₂` removed after an accepted step.
    pub max_pairing_projection: f64,
}

fn add_scaled(dst: &mut ComplexMatrix, s: f64, src: &ComplexMatrix) {
    dst.iter_mut().zip(src.iter()).for_each(|(a, b)| *a += b * s);
}

/// Everything the integrator advances in lockstep.
#[derive(Debug, Clone)]
struct Vars {
    delta: ComplexMatrix,
    d: ComplexMatrix,
    energy: f64,
    d_norm_int: f64,
    uv: Option<(ComplexMatrix, ComplexMatrix)>,
}

impl Vars {
    fn from_state(state: &FlowState, uv: Option<(ComplexMatrix, ComplexMatrix)>) -> Self {
        Self {
            delta: state.delta.matrix().clone(),
            d: state.d.matrix().clone(),
            energy: state.energy_integral,
            d_norm_int: state.d_norm_integral,
            uv,
        }
    }

    fn deriv(&self, upsilon0: &ComplexMatrix) -> Vars {
        let y = upsilon0 + &self.delta;
        let d = &self.d;
        let dn = hs_norm(d);
        let uv = self.uv.as_ref().map(|(u, v)| {
            let du = (d * v.map(|z| z.conj())).scale(4.0);
            let dv = (d * u.map(|z| z.conj())).scale(4.0);
            (du, dv)
        });
        Vars {
            delta: (d * d.adjoint()).scale(16.0),
            // Dᵀ = −D makes DΥᵀ = −(ΥD)ᵀ, bit for bit.
            d: {
                let yd = &y * d;
                (&yd - yd.transpose()).scale(-2.0)
            },
            energy: 8.0 * dn * dn,
            d_norm_int: dn,
            uv,
        }
    }

    /// `self + h Σ cᵢ kᵢ` over the nonzero coefficients.
    fn combine(&self, h: f64, coeffs: &[f64], ks: &[Vars]) -> Vars {
        let mut out = self.clone();
        for (&c, k) in coeffs.iter().zip(ks) {
            if c == 0.0 {
                continue;
            }
            let s = h * c;
            add_scaled(&mut out.delta, s, &k.delta);
            add_scaled(&mut out.d, s, &k.d);
            out.energy += s * k.energy;
            out.d_norm_int += s * k.d_norm_int;
            if let (Some((u, v)), Some((ku, kv))) = (out.uv.as_mut(), k.uv.as_ref()) {
                add_scaled(u, s, ku);
                add_scaled(v, s, kv);
            }
        }
        out
    }

    fn is_finite(&self) -> bool {
        let fin = |m: &ComplexMatrix| m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        fin(&self.delta)
            && fin(&self.d)
            && self.energy.is_finite()
            && self.uv.as_ref().is_none_or(|(u, v)| fin(u) && fin(v))
    }

    /// Projects back onto Hermitian `Δ` and antisymmetric `D`, returning the
    /// absolute HS size of the removed parts `(Δ, D)`.
    fn resymmetrize(&mut self) -> (f64, f64) {
        let removed_delta = 0.5 * hs_norm(&(&self.delta - self.delta.adjoint()));
        let removed_d = 0.5 * hs_norm(&(&self.d + self.d.transpose()));
        self.delta = HermitianMatrix::hermitian_part(&self.delta).into_inner();
        self.d = PairingMatrix::antisymmetric_part(&self.d).into_inner();
        (removed_delta, removed_d)
    }

    fn into_state(self, t: f64, invariant0: f64) -> (FlowState, Option<(ComplexMatrix, ComplexMatrix)>) {
        (
            FlowState {
                t,
                delta: HermitianMatrix::hermitian_part(&self.delta),
                d: PairingMatrix::antisymmetric_part(&self.d),
                energy_integral: self.energy,
                d_norm_integral: self.d_norm_int,
                invariant0,
            },
            self.uv,
        )
    }
}

// Dormand-Prince 5(4) tableau; the flow is autonomous so the nodes are unused.
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct DpStep {
    next: Vars,
    err: Vars,
}

fn dp_step(y: &Vars, upsilon0: &ComplexMatrix, h: f64) -> DpStep {
    let mut ks: Vec<Vars> = Vec::with_capacity(7);
    ks.push(y.deriv(upsilon0));
    for row in A.iter().skip(1) {
        let stage = y.combine(h, &row[..ks.len()], &ks);
        ks.push(stage.deriv(upsilon0));
    }
    let next = y.combine(h, &B5, &ks);
    let diff: Vec<f64> = B5.iter().zip(B4.iter()).map(|(a, b)| a - b).collect();
    let mut zero = y.clone();
    zero.delta.fill(Complex64::new(0.0, 0.0));
    zero.d.fill(Complex64::new(0.0, 0.0));
    zero.energy = 0.0;
    zero.d_norm_int = 0.0;
    if let Some((u, v)) = zero.uv.as_mut() {
        u.fill(Complex64::new(0.0, 0.0));
        v.fill(Complex64::new(0.0, 0.0));
    }
    let err = zero.combine(h, &diff, &ks);
    DpStep { next, err }
}

/// Absolute local error in the combined HS norm of `(Δ, D)`.
fn combined_error(err: &Vars) -> f64 {
    (hs_norm(&err.delta).powi(2) + hs_norm(&err.d).powi(2)).sqrt()
}

/// Error-to-tolerance ratio, blockwise; `≤ 1` accepts.
fn error_ratio(err: &Vars, y: &Vars, next: &Vars, rel: f64, abs: f64) -> f64 {
    let block = |e: f64, a: f64, b: f64| e / (abs + rel * a.max(b));
    let mut r = block(hs_norm(&err.delta), hs_norm(&y.delta), hs_norm(&next.delta))
        .max(block(hs_norm(&err.d), hs_norm(&y.d), hs_norm(&next.d)))
        .max(block(err.energy.abs(), y.energy.abs(), next.energy.abs()));
    if let (Some((eu, ev)), Some((u, v)), Some((nu, nv))) = (&err.uv, &y.uv, &next.uv) {
        r = r
            .max(block(hs_norm(eu), hs_norm(u), hs_norm(nu)))
            .max(block(hs_norm(ev), hs_norm(v), hs_norm(nv)));
    }
    r
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: FlowState,
    pub error_estimate: f64,
    pub h_used: f64,
}

/// One Dormand-Prince step of size `h`, halving until the local error is
/// below `control.err_cap`.
pub fn step(
    state: &FlowState,
    model: &QuadraticModel,
    h: f64,
    control: &StepControl,
) -> Result<StepOutcome> {
    check_dims("step", state, model)?;
    if !(h > 0.0) {
        return Err(Error::InvariantViolation {
            name: "step: h must be positive".into(),
            residual: h,
        });
    }
    let y = Vars::from_state(state, None);
    let mut h = h;
    let mut last = f64::INFINITY;
    for _ in 0..=control.max_retries {
        let DpStep { mut next, err } = dp_step(&y, model.upsilon0.matrix(), h);
        let e = combined_error(&err);
        if e <= control.err_cap && next.is_finite() {
            next.resymmetrize();
            let (s, _) = next.into_state(state.t + h, state.invariant0);
            return Ok(StepOutcome {
                state: s,
                error_estimate: e,
                h_used: h,
            });
        }
        last = e;
        h *= 0.5;
    }
    Err(Error::StepTooLarge {
        error: last,
        retries: control.max_retries,
    })
}

fn splitting_step(y: &Vars, upsilon0: &ComplexMatrix, h: f64) -> Vars {
    let n = upsilon0.nrows();
    let ups = HermitianMatrix::hermitian_part(&(upsilon0 + &y.delta));
    let half = spectral_map(&ups, |l| (-h * l).exp());
    let half_t = half.transpose();
    let d_mid = &half * &y.d * &half_t;
    let d_new = &half * &d_mid * &half_t;
    let mid_norm = hs_norm(&d_mid);
    let delta = &y.delta + (&d_mid * d_mid.adjoint()).scale(16.0 * h);
    let uv = y.uv.as_ref().map(|(u, v)| {
        // U ← exp(hK)U with K = [[0, 4D],[−4D*, 0]] anti-Hermitian; −iK is Hermitian.
        let mut gen = zeros(2 * n);
        let i = Complex64::new(0.0, 1.0);
        for r in 0..n {
            for c in 0..n {
                gen[(r, n + c)] = -i * d_mid[(r, c)] * 4.0 * h;
                gen[(n + r, c)] = i * d_mid[(c, r)].conj() * 4.0 * h;
            }
        }
        let step = expi(&HermitianMatrix::hermitian_part(&gen));
        let big = block_unitary(u, v);
        let next = step * big;
        (
            next.view((0, 0), (n, n)).into_owned(),
            next.view((0, n), (n, n)).into_owned(),
        )
    });
    Vars {
        delta,
        d: d_new,
        energy: y.energy + 8.0 * h * mid_norm * mid_norm,
        d_norm_int: y.d_norm_int + h * mid_norm,
        uv,
    }
}

/// `U = [[u, v],[v̄, ū]]`.
pub fn block_unitary(u: &ComplexMatrix, v: &ComplexMatrix) -> ComplexMatrix {
    let n = u.nrows();
    let mut big = zeros(2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(u);
    big.view_mut((0, n), (n, n)).copy_from(v);
    big.view_mut((n, 0), (n, n)).copy_from(&v.map(|z| z.conj()));
    big.view_mut((n, n), (n, n)).copy_from(&u.map(|z| z.conj()));
    big
}

/// Initial step `min(0.01, 0.1/(1 + ‖Υ₀‖_op))`.
pub fn initial_step(model: &QuadraticModel) -> f64 {
    (0.1 / (1.0 + op_norm(model.upsilon0.matrix()))).min(0.01)
}

/// Integrates from `t = 0` until `‖Dₜ‖₂ ≤ d_tol` or `t = t_max`.
///
/// Not reaching `d_tol` is reported through `converged = false`; only
/// numerical breakdown is an error.
pub fn integrate(model: &QuadraticModel, opts: &IntegrateOptions) -> Result<Integration> {
    let t_max = opts.effective_t_max();
    let upsilon0 = model.upsilon0.matrix().clone();
    let n = model.dim();
    let state0 = FlowState::initial(model);
    let invariant0 = state0.invariant0;
    let uv0 = opts
        .co_integrate_uv
        .then(|| (identity(n), zeros(n)));
    let mut y = Vars::from_state(&state0, uv0);
    let mut t = 0.0;

    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let record = |t: f64, y: &Vars, trace: &mut Vec<TraceSample>, snaps: &mut Vec<Snapshot>| {
        let (state, uv) = y.clone().into_state(t, invariant0);
        let zeta = opts.mu.and_then(|mu| zeta(&state, model, mu).ok());
        trace.push(TraceSample {
            t,
            d_hs_norm: state.d_norm(),
            invariant_drift: motion_invariant(&state, model),
            energy_integral: state.energy_integral,
            zeta,
        });
        if opts.record_snapshots {
            snaps.push(Snapshot {
                pair: uv.map(|(u, v)| BogoliubovPair {
                    u,
                    v,
                    t_from: 0.0,
                    t_to: t,
                }),
                state,
            });
        }
    };
    record(t, &y, &mut trace, &mut snapshots);

    let mut converged = hs_norm(&y.d) <= opts.d_tol;
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut h = match opts.method {
        Method::DormandPrince => initial_step(model),
        Method::Splitting { h } => h,
    };
    if let Some(cap) = opts.max_step {
        h = h.min(cap);
    }
    let h_min = 1e-14 * t_max.max(1.0);
    let mut last_recorded = 0usize;
    let mut projection = (0.0f64, 0.0f64);

    while !converged && t < t_max {
        if steps >= opts.max_steps {
            return Err(Error::IntegratorFailure(format!(
                "step budget {} exhausted at t = {t}",
                opts.max_steps
            )));
        }
        let h_try = h.min(t_max - t);
        let (mut next, h_taken, h_next) = match opts.method {
            Method::DormandPrince => {
                let DpStep { next, err } = dp_step(&y, &upsilon0, h_try);
                let ratio = error_ratio(&err, &y, &next, opts.rel_err, opts.abs_err);
                if !next.is_finite() || !(ratio <= 1.0) {
                    rejected += 1;
                    let factor = if ratio.is_finite() {
                        (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.5)
                    } else {
                        0.1
                    };
                    h = h_try * factor;
                    if h < h_min {
                        return Err(Error::IntegratorFailure(format!(
                            "step size underflow at t = {t} (h = {h:.3e})"
                        )));
                    }
                    continue;
                }
                let grow = if ratio > 0.0 {
                    (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
                } else {
                    5.0
                };
                (next, h_try, h_try * grow)
            }
            Method::Splitting { .. } => {
                let next = splitting_step(&y, &upsilon0, h_try);
                if !next.is_finite() {
                    return Err(Error::IntegratorFailure(format!(
                        "splitting step produced non-finite values at t = {t}"
                    )));
                }
                (next, h_try, h)
            }
        };
        let (rd, rp) = next.resymmetrize();
        projection.0 = projection.0.max(rd);
        projection.1 = projection.1.max(rp);
        y = next;
        t += h_taken;
        steps += 1;
        h = match opts.max_step {
            Some(cap) => h_next.min(cap),
            None => h_next,
        };
        converged = hs_norm(&y.d) <= opts.d_tol;
        let at_end = converged || t >= t_max;
        if steps % opts.trace_every.max(1) == 0 || at_end {
            record(t, &y, &mut trace, &mut snapshots);
            last_recorded = steps;
        }
    }
    if last_recorded != steps {
        record(t, &y, &mut trace, &mut snapshots);
    }

    let (final_state, uv) = y.into_state(t, invariant0);
    if converged {
        debug!("flow converged at t = {t} after {steps} steps ({rejected} rejected)");
    } else {
        warn!(
            "flow stopped at t = {t} without reaching d_tol (‖D‖₂ = {:.3e})",
            final_state.d_norm()
        );
    }
    Ok(Integration {
        pair: uv.map(|(u, v)| BogoliubovPair {
            u,
            v,
            t_from: 0.0,
            t_to: t,
        }),
        final_state,
        converged,
        steps,
        rejected,
        trace,
        snapshots,
        max_hermitian_projection: projection.0,
        max_pairing_projection: projection.1,
    })
}

/// Slope of the least-squares line through `(t, ln‖D‖₂)` over the final half
/// of the trace; `None` when fewer than two usable samples remain.
pub fn decay_slope(trace: &[TraceSample]) -> Option<f64> {
    let tail = &trace[trace.len() / 2..];
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .filter(|s| s.d_hs_norm > 0.0)
        .map(|s| (s.t, s.d_hs_norm.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (st, sl) = pts.iter().fold((0.0, 0.0), |(a, b), &(t, l)| (a + t, b + l));
    let (mt, ml) = (st / m, sl / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), &(t, l)| {
        (a + (t - mt) * (l - ml), b + (t - mt) * (t - mt))
    });
    (den > 0.0).then(|| num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_real;

    fn commuting_model() -> QuadraticModel {
        QuadraticModel::new(
            HermitianMatrix::identity(2).scaled(3.0),
            PairingMatrix::new(from_real(2, 2, &[0.0, 2.0, -2.0, 0.0])).unwrap(),
            0.0,
        )
        .unwrap()
    }

    fn bcs_like(a: f64, g: f64) -> QuadraticModel {
        let half = g / 2.0;
        let d = from_real(
            4,
            4,
            &[
                0.0, 0.0, 0.0, half, //
                0.0, 0.0, half, 0.0, //
                0.0, -half, 0.0, 0.0, //
                -half, 0.0, 0.0, 0.0,
            ],
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
    fn upsilon_at_zero_is_upsilon0() {
        let m = noncommuting();
        let s = FlowState::initial(&m);
        assert_eq!(upsilon_t(&s, &m).unwrap(), m.upsilon0);
    }

    #[test]
    fn rhs_vanishes_without_pairing() {
        let m = QuadraticModel::new(
            HermitianMatrix::from_diagonal(&[1.0, 2.0]),
            PairingMatrix::zeros(2),
            0.0,
        )
        .unwrap();
        let r = flow_rhs(&FlowState::initial(&m), &m).unwrap();
        assert_eq!(hs_norm(r.delta_dot.matrix()), 0.0);
        assert_eq!(hs_norm(&r.d_dot), 0.0);
        assert_eq!(r.energy_dot, 0.0);
    }

    #[test]
    fn rhs_scalar_upsilon() {
        let m = commuting_model();
        let r = flow_rhs(&FlowState::initial(&m), &m).unwrap();
        let expect = m.d0.matrix().scale(-12.0);
        assert!(hs_norm(&(r.d_dot - expect)) < 1e-14);
        assert!((r.energy_dot - 8.0 * 8.0).abs() < 1e-12);
    }

    #[test]
    fn rhs_dimension_mismatch() {
        let m = commuting_model();
        let other = noncommuting();
        let mut s = FlowState::initial(&m);
        s.delta = HermitianMatrix::zeros(3);
        assert!(matches!(
            flow_rhs(&s, &other),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn step_without_pairing_only_advances_time() {
        let m = QuadraticModel::new(
            HermitianMatrix::from_diagonal(&[1.0, 2.0]),
            PairingMatrix::zeros(2),
            0.5,
        )
        .unwrap();
        let s = FlowState::initial(&m);
        let out = step(&s, &m, 0.3, &StepControl::default()).unwrap();
        assert_eq!(out.state.t, 0.3);
        assert_eq!(out.state.delta, s.delta);
        assert_eq!(out.state.d, s.d);
        assert_eq!(out.state.energy_integral, 0.0);
    }

    #[test]
    fn step_conserves_motion_invariant() {
        let m = commuting_model();
        let s = FlowState::initial(&m);
        let out = step(&s, &m, 1e-3, &StepControl::default()).unwrap();
        let drift = motion_invariant(&out.state, &m).abs();
        assert!(drift <= 1e-12 * s.invariant0.abs(), "drift {drift}");
    }

    #[test]
    fn first_step_energy_is_first_order() {
        let m = noncommuting();
        let s = FlowState::initial(&m);
        for h in [1e-2, 5e-3, 2.5e-3] {
            let out = step(&s, &m, h, &StepControl::default()).unwrap();
            let taylor = 8.0 * hs_norm(m.d0.matrix()).powi(2) * out.h_used;
            // The O(h²) remainder is bounded by the second derivative of 8‖D‖².
            assert!((out.state.energy_integral - taylor).abs() <= 10.0 * out.h_used.powi(2));
        }
    }

    #[test]
    fn step_rejects_huge_steps() {
        let m = commuting_model();
        let s = FlowState::initial(&m);
        let tight = StepControl {
            err_cap: 1e-30,
            max_retries: 3,
        };
        assert!(matches!(
            step(&s, &m, 1.0, &tight),
            Err(Error::StepTooLarge { retries: 3, .. })
        ));
    }

    #[test]
    fn trivial_model_converges_immediately() {
        let m = QuadraticModel::new(
            HermitianMatrix::from_diagonal(&[1.0, 2.0]),
            PairingMatrix::zeros(2),
            0.0,
        )
        .unwrap();
        let run = integrate(&m, &IntegrateOptions::default()).unwrap();
        assert!(run.converged);
        assert_eq!(run.final_state.t, 0.0);
        assert_eq!(run.final_state.energy_integral, 0.0);
    }

    #[test]
    fn commuting_model_reaches_closed_form() {
        let m = commuting_model();
        let run = integrate(&m, &IntegrateOptions::default()).unwrap();
        assert!(run.converged);
        let y = upsilon_t(&run.final_state, &m).unwrap();
        assert!(hs_norm(&(y.matrix() - identity(2).scale(5.0))) < 1e-9);
        // tr Δ∞ = 2·(8∫‖D‖²)
        assert!((run.final_state.delta.trace() - 2.0 * run.final_state.energy_integral).abs() < 1e-9);
        assert!((run.final_state.energy_integral - 2.0).abs() < 1e-9);
        for s in &run.trace {
            assert!(s.invariant_drift.abs() <= 1e-8 * run.final_state.invariant0);
        }
    }

    #[test]
    fn bcs_fiber_energy_integral() {
        // ε−κ = 3, γ|c| = 2: 8∫‖D‖² = −2(3 − √13)
        let m = bcs_like(3.0, 2.0);
        let run = integrate(&m, &IntegrateOptions::default()).unwrap();
        assert!(run.converged);
        let expect = -2.0 * (3.0 - 13f64.sqrt());
        assert!((run.final_state.energy_integral - expect).abs() < 1e-9 * expect);
        let y = upsilon_t(&run.final_state, &m).unwrap();
        assert!(hs_norm(&(y.matrix() - identity(4).scale(13f64.sqrt()))) < 1e-9);
    }

    #[test]
    fn noncommuting_spectrum() {
        let m = noncommuting();
        let run = integrate(&m, &IntegrateOptions::default()).unwrap();
        let v = crate::linalg::eigvalsh(&upsilon_t(&run.final_state, &m).unwrap());
        // Positive spectrum of 2h: √(1.5² + 0.6²) ∓ ½.
        let expect = [1.1155494421403511, 2.115549442140351];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn structure_is_preserved() {
        let m = noncommuting();
        let opts = IntegrateOptions {
            record_snapshots: true,
            ..Default::default()
        };
        let run = integrate(&m, &opts).unwrap();
        let mut last_trace = -1.0;
        for snap in &run.snapshots {
            let d = snap.state.d.matrix();
            assert!(hs_norm(&(d + d.transpose())) <= 1e-10);
            assert!(snap.state.delta.min_eigenvalue() >= -1e-9);
            let tr = snap.state.delta.trace();
            assert!(tr >= last_trace - 1e-12);
            last_trace = tr;
            assert!((tr - 2.0 * snap.state.energy_integral).abs() <= 1e-10);
        }
    }

    #[test]
    fn commuting_structure_persists_along_flow() {
        let m = bcs_like(-0.5, 1.0);
        let opts = IntegrateOptions {
            record_snapshots: true,
            ..Default::default()
        };
        let run = integrate(&m, &opts).unwrap();
        for snap in &run.snapshots {
            let y = upsilon_t(&snap.state, &m).unwrap();
            let d = snap.state.d.matrix();
            let r = hs_norm(&(y.matrix() * d - d * y.matrix().transpose()));
            assert!(r <= 1e-8 * hs_norm(d) * hs_norm(y.matrix()) + 1e-300);
        }
    }

    #[test]
    fn splitting_matches_dormand_prince() {
        let m = noncommuting();
        let dp = integrate(&m, &IntegrateOptions::default()).unwrap();
        let sp = integrate(
            &m,
            &IntegrateOptions {
                method: Method::Splitting { h: 1e-3 },
                co_integrate_uv: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(sp.converged);
        let diff = hs_norm(&(dp.final_state.delta.matrix() - sp.final_state.delta.matrix()));
        assert!(diff < 1e-4, "splitting deviates by {diff}");
        let pair = sp.pair.unwrap();
        let r = crate::bogoliubov::bogoliubov_residuals(&pair);
        assert!(r.max() < 1e-10);
    }

    #[test]
    fn remark3_feasibility() {
        let alpha = 1.7;
        let m = QuadraticModel::new(
            HermitianMatrix::identity(3).scaled(alpha),
            PairingMatrix::zeros(3),
            0.0,
        )
        .unwrap();
        let c = check_conditions(&m, alpha / 2.0, alpha, &ConditionTolerances::default()).unwrap();
        assert!(c.feasible);
        assert!(c.zeta0 >= 0.0);
    }

    #[test]
    fn bcs_feasibility_interval() {
        let tol = ConditionTolerances::default();
        let m = bcs_like(3.0, 2.0);
        let edge = 13f64.sqrt();
        let probe = |mu: f64| {
            let eps = default_eps(mu, 3.0).unwrap();
            check_conditions(&m, mu, eps, &tol).unwrap().feasible
        };
        assert!(probe(edge));
        assert!(!probe(edge + 0.01));
        assert!(probe(1.0));
        // κ > ε: interval (κ − ε, √((ε−κ)² + γ²|c|²)]
        let m = bcs_like(-0.5, 1.0);
        let hi = (0.25f64 + 1.0).sqrt();
        let probe = |mu: f64| match default_eps(mu, -0.5) {
            Some(eps) => check_conditions(&m, mu, eps, &tol).unwrap().feasible,
            None => false,
        };
        assert!(!probe(0.45));
        assert!(probe(0.6));
        assert!(probe(hi - 1e-9));
        assert!(!probe(hi + 1e-6));
    }

    #[test]
    fn singular_shift_is_reported() {
        let m = QuadraticModel::new(
            HermitianMatrix::from_diagonal(&[-1.0, 2.0]),
            PairingMatrix::zeros(2),
            0.0,
        )
        .unwrap();
        assert!(matches!(
            check_conditions(&m, 1.0, 0.5, &ConditionTolerances::default()),
            Err(Error::SingularShift { .. })
        ));
    }

    #[test]
    fn max_mu_examples() {
        let tol = ConditionTolerances::default();
        let m = QuadraticModel::new(HermitianMatrix::identity(2), PairingMatrix::zeros(2), 0.0)
            .unwrap();
        let (mu, c) = find_max_mu(&m, &MuSearch::default(), &tol).unwrap();
        assert!(c.feasible);
        assert!((mu - 1.0).abs() < 1e-9);

        let (mu, _) = find_max_mu(&bcs_like(3.0, 2.0), &MuSearch::default(), &tol).unwrap();
        assert!((mu - 13f64.sqrt()).abs() < 1e-9);

        let bad = QuadraticModel::new(
            HermitianMatrix::identity(2).scaled(-10.0),
            PairingMatrix::zeros(2),
            0.0,
        )
        .unwrap();
        assert!(matches!(
            find_max_mu(&bad, &MuSearch::default(), &tol),
            Err(Error::NoFeasibleMu { .. })
        ));
    }

    #[test]
    fn zeta_examples() {
        let m = QuadraticModel::new(
            HermitianMatrix::from_diagonal(&[1.0, 2.0]),
            PairingMatrix::zeros(2),
            0.0,
        )
        .unwrap();
        let z = zeta(&FlowState::initial(&m), &m, 0.4).unwrap();
        assert!((z - 0.6).abs() < 1e-14);
    }

    #[test]
    fn zeta_is_nonincreasing() {
        let m = noncommuting();
        let mu = 0.8;
        let opts = IntegrateOptions {
            mu: Some(mu),
            ..Default::default()
        };
        let run = integrate(&m, &opts).unwrap();
        let zs: Vec<f64> = run.trace.iter().map(|s| s.zeta.unwrap()).collect();
        assert!(zs[0] >= 0.0);
        for w in zs.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "{} -> {}", w[0], w[1]);
        }
        assert!(decay_slope(&run.trace).unwrap() < 0.0);
    }

    #[test]
    fn motion_invariant_zero_at_start() {
        let m = noncommuting();
        assert_eq!(motion_invariant(&FlowState::initial(&m), &m), 0.0);
    }
}
