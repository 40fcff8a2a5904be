use std::fs;
use std::path::{Path, PathBuf};

use fqh_core::diagonalizer::{self_dual_oracle, MuChoice};
use fqh_core::flow::{
    check_conditions, default_eps, find_max_mu, ConditionTolerances, IntegrateOptions, Method,
    MuSearch, TraceSample,
};
use fqh_core::io::{load_model, model_to_json, parse_complex, save_model, save_result};
use fqh_core::linalg::{eigvalsh, hermiticity_residual, hs_norm, pairing_residual};
use fqh_core::models::{bcs_closed_form, bcs_fiber_scaled, random_admissible_scaled, BcsParams};
use fqh_core::{diagonalize as run_flow, DiagonalizationResult, DiagonalizeOptions, Error, QuadraticModel, Result};
use log::info;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::{BcsArgs, CheckArgs, ConditionArgs, DiagonalizeArgs, FlowArgs, MethodArg, RandomArgs, TraceArgs};

pub fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn pinned_eps(model: &QuadraticModel, mu: f64, eps: Option<f64>) -> Result<f64> {
    eps.or_else(|| default_eps(mu, model.upsilon0.min_eigenvalue()))
        .ok_or_else(|| {
            Error::Parse(format!(
                "--eps is required for --mu {mu}: the default min(μ + λ_min(Υ₀), μ)/2 is not positive"
            ))
        })
}

fn mu_choice(model: &QuadraticModel, c: &ConditionArgs, skip: bool) -> Result<MuChoice> {
    if skip {
        return Ok(MuChoice::Skip);
    }
    Ok(match c.mu {
        Some(mu) => MuChoice::Pinned {
            mu,
            eps: pinned_eps(model, mu, c.eps)?,
        },
        None => MuChoice::Search(MuSearch::default()),
    })
}

fn options(model: &QuadraticModel, a: &FlowArgs) -> Result<DiagonalizeOptions> {
    Ok(DiagonalizeOptions {
        flow: IntegrateOptions {
            d_tol: a.d_tol,
            t_max: a.t_max,
            rel_err: a.rel_err,
            abs_err: a.abs_err,
            trace_every: a.trace_every.max(1),
            max_step: a.max_step,
            max_steps: a.max_steps,
            method: match a.method {
                MethodArg::Dp => Method::DormandPrince,
                MethodArg::Splitting => Method::Splitting { h: a.split_step },
            },
            ..IntegrateOptions::default()
        },
        mu: mu_choice(model, &a.conditions, a.skip_conditions)?,
        ..DiagonalizeOptions::default()
    })
}

pub fn write_trace(path: &Path, trace: &[TraceSample]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["t", "d_hs_norm", "invariant_drift", "energy_integral", "zeta"])
        .map_err(csv_err)?;
    for s in trace {
        w.write_record([
            format!("{:?}", s.t),
            format!("{:?}", s.d_hs_norm),
            format!("{:?}", s.invariant_drift),
            format!("{:?}", s.energy_integral),
            s.zeta.map(|z| format!("{z:?}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn run_report(input: &Path, output: Option<&Path>, r: &DiagonalizationResult) -> Value {
    let d = &r.diagnostics;
    json!({
        "input": input,
        "output": output,
        "converged": d.converged,
        "e_shift": r.e_shift,
        "e_inf": r.e_inf,
        "spectrum_inf": eigvalsh(&r.upsilon_inf),
        "t_final": d.t_final,
        "final_d_norm": d.final_d_norm,
        "invariant_drift": d.invariant_drift,
        "steps": d.steps,
        "mu_used": d.mu_used,
        "eps_used": d.eps_used,
        "zeta0": d.zeta0,
        "feasible": d.feasible,
        "gap_ok": d.gap_ok,
    })
}

fn run_code(r: &DiagonalizationResult) -> u8 {
    if r.diagnostics.gap_ok == Some(false) {
        3
    } else if !r.diagnostics.converged {
        2
    } else {
        0
    }
}

fn diagonalize_one(input: &Path, output: Option<&Path>, trace: Option<&Path>, flow: &FlowArgs) -> Result<(Value, u8)> {
    let model = load_model(input)?;
    let r = run_flow(&model, &options(&model, flow)?)?;
    if let Some(out) = output {
        save_result(out, &r)?;
    }
    if let Some(t) = trace {
        write_trace(t, &r.trace)?;
    }
    info!("{}: {} steps", input.display(), r.diagnostics.steps);
    Ok((run_report(input, output, &r), run_code(&r)))
}

fn threads() -> Option<usize> {
    std::env::var("FQH_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn model_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn batch(a: &DiagonalizeArgs) -> Result<u8> {
    let files = model_files(&a.input)?;
    for dir in [&a.output, &a.trace].into_iter().flatten() {
        fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads().unwrap_or(0))
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let outcomes: Vec<(Value, u8)> = pool.install(|| {
        files
            .par_iter()
            .map(|f| {
                let name = f.file_name().expect("listed files have names");
                let out = a.output.as_ref().map(|d| d.join(name));
                let trace = a.trace.as_ref().map(|d| d.join(Path::new(name).with_extension("csv")));
                diagonalize_one(f, out.as_deref(), trace.as_deref(), &a.flow).unwrap_or_else(|e| {
                    let code = crate::exit_code(&e);
                    (json!({ "input": f, "error": e.to_string(), "exit_code": code }), code)
                })
            })
            .collect()
    });
    let code = outcomes.iter().map(|(_, c)| *c).max().unwrap_or(0);
    print_json(&Value::Array(outcomes.into_iter().map(|(v, _)| v).collect()));
    Ok(code)
}

pub fn diagonalize(a: &DiagonalizeArgs) -> Result<u8> {
    if a.input.is_dir() {
        return batch(a);
    }
    let (report, code) = diagonalize_one(&a.input, a.output.as_deref(), a.trace.as_deref(), &a.flow)?;
    print_json(&report);
    Ok(code)
}

pub fn trace(a: &TraceArgs) -> Result<u8> {
    let (report, code) = diagonalize_one(&a.model, None, Some(&a.output), &a.flow)?;
    print_json(&report);
    Ok(code)
}

pub fn check(a: &CheckArgs) -> Result<u8> {
    let model = load_model(&a.model)?;
    let tol = ConditionTolerances::default();
    let cond = match a.conditions.mu {
        Some(mu) => Some(check_conditions(&model, mu, pinned_eps(&model, mu, a.conditions.eps)?, &tol)?),
        None => match find_max_mu(&model, &MuSearch::default(), &tol) {
            Ok((_, c)) => Some(c),
            Err(Error::NoFeasibleMu { .. }) => None,
            Err(e) => return Err(e),
        },
    };
    let feasible = cond.is_some_and(|c| c.feasible);
    print_json(&json!({
        "model": a.model,
        "dim": model.dim(),
        "e0": model.e0,
        "hermiticity_residual": hermiticity_residual(model.upsilon0.matrix()),
        "pairing_residual": pairing_residual(model.d0.matrix()),
        "commutator_residual": model.commutator_residual(),
        "lambda_min_upsilon": model.upsilon0.min_eigenvalue(),
        "lambda_max_upsilon": model.upsilon0.max_eigenvalue(),
        "d_hs_norm": hs_norm(model.d0.matrix()),
        "motion_baseline": model.motion_baseline(),
        "self_dual_zero_mode": self_dual_oracle(&model).zero_mode,
        "mu_source": if a.conditions.mu.is_some() { "pinned" } else { "search" },
        "conditions": cond.map(|c| json!({
            "mu": c.mu,
            "eps": c.eps,
            "zeta0": c.zeta0,
            "feasible": c.feasible,
        })),
        "feasible": feasible,
    }));
    Ok(if feasible { 0 } else { 3 })
}

fn emit_model(model: &QuadraticModel, output: Option<&Path>, extra: Value) -> Result<u8> {
    match output {
        Some(path) => {
            save_model(path, model)?;
            let mut report = json!({ "output": path, "dim": model.dim(), "e0": model.e0 });
            if let (Value::Object(r), Value::Object(x)) = (&mut report, extra) {
                r.extend(x);
            }
            print_json(&report);
        }
        None => print!("{}", model_to_json(model)),
    }
    Ok(0)
}

pub fn bcs(a: &BcsArgs) -> Result<u8> {
    let p = BcsParams::new(a.epsilon, a.kappa, a.gamma, parse_complex(&a.c)?)?;
    let model = bcs_fiber_scaled(&p, a.volume_factor);
    let cf = bcs_closed_form(&p);
    emit_model(
        &model,
        a.output.as_deref(),
        json!({
            "closed_form": {
                "lambda": cf.lambda,
                "fiber_e_shift": cf.fiber_e_shift,
                "u_sq": cf.u_sq,
                "v_sq": cf.v_sq,
            }
        }),
    )
}

pub fn random(a: &RandomArgs) -> Result<u8> {
    let model = random_admissible_scaled(a.dim, a.seed, a.gap, a.d_scale)?;
    emit_model(
        &model,
        a.output.as_deref(),
        json!({ "seed": a.seed, "gap": a.gap, "d_scale": a.d_scale }),
    )
}
