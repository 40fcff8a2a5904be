//! Top-level driver and the two closed-form oracles it is checked against.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bogoliubov::{build_self_dual, co_integrate_uv, BogoliubovPair};
use crate::error::{Error, Result};
use crate::flow::{
    self, check_conditions, find_max_mu, ConditionTolerances, IntegrateOptions, MuSearch,
    SpectralCondition, TraceSample,
};
use crate::linalg::{
    eigh, eigvalsh, hs_norm, identity, op_norm, psd_sqrt, ComplexMatrix, HermitianMatrix, Tolerances,
};
use crate::model::QuadraticModel;

#[derive(Debug, Clone, PartialEq)]
pub enum MuChoice {
    /// Use this `(μ, ε)`; the only way to run on the negative-μ branch.
    Pinned { mu: f64, eps: f64 },
    Search(MuSearch),
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalizeOptions {
    pub flow: IntegrateOptions,
    pub mu: MuChoice,
    pub conditions: ConditionTolerances,
    pub gap_tol: f64,
}

impl Default for DiagonalizeOptions {
    fn default() -> Self {
        Self {
            flow: IntegrateOptions::default(),
            mu: MuChoice::Search(MuSearch::default()),
            conditions: ConditionTolerances::default(),
            gap_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub t_final: f64,
    pub final_d_norm: f64,
    pub invariant_drift: f64,
    pub mu_used: Option<f64>,
    pub eps_used: Option<f64>,
    pub zeta0: Option<f64>,
    /// Whether the admissibility conditions held for `mu_used`.
    pub feasible: bool,
    /// `λ_min(Υ∞) ≥ μ − gap_tol`; `None` when not applicable.
    pub gap_ok: Option<bool>,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct DiagonalizationResult {
    pub upsilon_inf: HermitianMatrix,
    /// `−8∫₀^∞‖D_τ‖₂² dτ`.
    pub e_shift: f64,
    pub e_inf: f64,
    pub pair: BogoliubovPair,
    pub diagnostics: Diagnostics,
    pub trace: Vec<TraceSample>,
}

fn resolve_mu(
    model: &QuadraticModel,
    choice: &MuChoice,
    tol: &ConditionTolerances,
) -> Option<SpectralCondition> {
    match choice {
        MuChoice::Skip => None,
        MuChoice::Pinned { mu, eps } => match check_conditions(model, *mu, *eps, tol) {
            Ok(c) => {
                if !c.feasible {
                    warn!("μ = {mu}, ε = {eps} violates the admissibility conditions; running in experimental mode");
                }
                Some(c)
            }
            Err(e) => {
                warn!("check_conditions failed ({e}); running in experimental mode");
                None
            }
        },
        MuChoice::Search(search) => match find_max_mu(model, search, tol) {
            Ok((_, c)) => Some(c),
            Err(e) => {
                warn!("{e}; running in experimental mode");
                None
            }
        },
    }
}

pub fn diagonalize(model: &QuadraticModel, opts: &DiagonalizeOptions) -> Result<DiagonalizationResult> {
    let cond = resolve_mu(model, &opts.mu, &opts.conditions);
    let mut flow_opts = opts.flow.clone();
    if flow_opts.mu.is_none() {
        flow_opts.mu = match (&opts.mu, cond) {
            (MuChoice::Pinned { mu, .. }, _) => Some(*mu),
            (_, Some(c)) => Some(c.mu),
            _ => None,
        };
    }
    let run = co_integrate_uv(model, &flow_opts)?;
    let state = &run.final_state;
    let upsilon_inf = flow::upsilon_t(state, model)?;
    let e_shift = -state.energy_integral;
    let feasible = cond.is_some_and(|c| c.feasible);
    let gap_ok = match cond {
        Some(c) if run.converged && c.feasible && c.mu > 0.0 => {
            let ok = upsilon_inf.min_eigenvalue() >= c.mu - opts.gap_tol;
            if !ok {
                warn!("gap check failed: λ_min(Υ∞) < μ = {}", c.mu);
            }
            Some(ok)
        }
        _ => None,
    };
    let pair = run.pair.clone().expect("co-integration returns the pair");
    Ok(DiagonalizationResult {
        diagnostics: Diagnostics {
            converged: run.converged,
            t_final: state.t,
            final_d_norm: state.d_norm(),
            invariant_drift: flow::motion_invariant(state, model),
            mu_used: cond.map(|c| c.mu),
            eps_used: cond.map(|c| c.eps),
            zeta0: cond.map(|c| c.zeta0),
            feasible,
            gap_ok,
            steps: run.steps,
        },
        e_inf: model.e0 + e_shift,
        e_shift,
        upsilon_inf,
        pair,
        trace: run.trace,
    })
}

/// Commuting-case limit without a flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    pub upsilon_inf: HermitianMatrix,
    pub e_shift: f64,
    pub e_inf: f64,
}

/// `Υ∞ = √(Υ₀² + 4D₀D₀*)` and `e_shift = −½ tr(Υ∞ − Υ₀)`, valid when
/// `Υ₀D₀ = D₀Υ₀ᵀ`. On the kernel of `D₀D₀*` the flow is static, so there
/// `Υ∞ = Υ₀` even where `Υ₀` is negative.
pub fn commuting_closed_form(model: &QuadraticModel, commute_tol: f64) -> Result<ClosedForm> {
    let u = model.upsilon0.matrix();
    let d = model.d0.matrix();
    let scale = hs_norm(u) * hs_norm(d);
    let residual = model.commutator_residual();
    if residual > commute_tol * scale {
        return Err(Error::NotCommuting {
            residual: residual / scale.max(f64::MIN_POSITIVE),
        });
    }
    let dd = HermitianMatrix::hermitian_part(&(d * d.adjoint()).scale(4.0));
    let square = HermitianMatrix::hermitian_part(&(u * u + dd.matrix()));
    let root = psd_sqrt(&square, Tolerances::default().psd)?;
    // Modes untouched by the pairing keep their (possibly negative) energy.
    let eig = eigh(&dd);
    let cut = 1e-12 * eig.values.last().copied().unwrap_or(0.0).max(1.0);
    let mut proj = ComplexMatrix::zeros(u.nrows(), u.ncols());
    for (k, &l) in eig.values.iter().enumerate() {
        if l > cut {
            let c = eig.vectors.column(k);
            proj += &c * c.adjoint();
        }
    }
    let rest = identity(u.nrows()) - &proj;
    let upsilon_inf =
        HermitianMatrix::hermitian_part(&(&proj * root.matrix() * &proj + &rest * u * &rest));
    let e_shift = -0.5 * (upsilon_inf.trace() - model.upsilon0.trace());
    Ok(ClosedForm {
        upsilon_inf,
        e_shift,
        e_inf: model.e0 + e_shift,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfDualSpectrum {
    /// `2λ` for the `n` largest eigenvalues `λ` of `h`, ascending.
    pub spectrum_inf: Vec<f64>,
    pub e_shift: f64,
    /// Some eigenvalue of `h` sits within the zero-mode tolerance; the
    /// admissibility hypotheses exclude this, so treat the output as a warning.
    pub zero_mode: bool,
}

pub const ORACLE_ZERO_TOL: f64 = 1e-9;

/// Spectrum of `Υ∞` and the energy shift read off the self-dual Hamiltonian.
pub fn self_dual_oracle(model: &QuadraticModel) -> SelfDualSpectrum {
    let n = model.dim();
    let h = build_self_dual(model);
    let ev = eigvalsh(h.hermitian());
    let zero_tol = ORACLE_ZERO_TOL * op_norm(h.matrix()).max(f64::MIN_POSITIVE);
    let zero_mode = ev.iter().any(|l| l.abs() <= zero_tol);
    if zero_mode {
        warn!("self_dual_oracle: h has an eigenvalue within {zero_tol:.3e} of zero");
    }
    let spectrum_inf: Vec<f64> = ev[n..].iter().map(|l| 2.0 * l).collect();
    let e_shift = -0.5 * (spectrum_inf.iter().sum::<f64>() - model.upsilon0.trace());
    SelfDualSpectrum {
        spectrum_inf,
        e_shift,
        zero_mode,
    }
}
