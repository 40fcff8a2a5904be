//! JSON files for models and results.
//!
//! Complex scalars are `[re, im]` arrays and matrices are arrays of rows.
//! Floats are written with the shortest representation that round-trips, so
//! `parse(write(x)) == x` bit for bit.
//!
//! ```json
//! {"dim": 2, "e0": 0.0,
//!  "upsilon": [[[3,0],[0,0]], [[0,0],[3,0]]],
//!  "d":       [[[0,0],[2,0]], [[-2,0],[0,0]]]}
//! ```

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bogoliubov::BogoliubovPair;
use crate::diagonalizer::{DiagonalizationResult, Diagnostics};
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, HermitianMatrix, PairingMatrix};
use crate::model::QuadraticModel;

type Rows = Vec<Vec<Complex64>>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    dim: usize,
    e0: f64,
    upsilon: Rows,
    d: Rows,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultFile {
    upsilon_inf: Rows,
    e_shift: f64,
    e_inf: f64,
    u: Rows,
    v: Rows,
    diagnostics: Diagnostics,
}

fn to_rows(m: &ComplexMatrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &Rows, dim: usize) -> Result<ComplexMatrix> {
    if rows.len() != dim {
        return Err(Error::Parse(format!("{name}: expected {dim} rows, got {}", rows.len())));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
        return Err(Error::Parse(format!(
            "{name}: row {i} has {} entries, expected {dim}",
            r.len()
        )));
    }
    if rows.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Parse(format!("{name}: non-finite entry")));
    }
    Ok(ComplexMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

pub fn parse_model(text: &str) -> Result<QuadraticModel> {
    let f: ModelFile = serde_json::from_str(text)?;
    if f.dim == 0 {
        return Err(Error::Parse("dim must be positive".into()));
    }
    if !f.e0.is_finite() {
        return Err(Error::Parse("e0 must be finite".into()));
    }
    let u = from_rows("upsilon", &f.upsilon, f.dim)?;
    let d = from_rows("d", &f.d, f.dim)?;
    QuadraticModel::new(HermitianMatrix::new(u)?, PairingMatrix::new(d)?, f.e0)
}

pub fn model_to_json(model: &QuadraticModel) -> String {
    let f = ModelFile {
        dim: model.dim(),
        e0: model.e0,
        upsilon: to_rows(model.upsilon0.matrix()),
        d: to_rows(model.d0.matrix()),
    };
    serde_json::to_string_pretty(&f).expect("model serializes") + "\n"
}

/// Reads a result file. The trace is not stored, so it comes back empty.
pub fn parse_result(text: &str) -> Result<DiagonalizationResult> {
    let f: ResultFile = serde_json::from_str(text)?;
    let dim = f.upsilon_inf.len();
    if dim == 0 {
        return Err(Error::Parse("upsilon_inf is empty".into()));
    }
    if !f.e_shift.is_finite() || !f.e_inf.is_finite() {
        return Err(Error::Parse("e_shift and e_inf must be finite".into()));
    }
    let upsilon_inf = HermitianMatrix::new(from_rows("upsilon_inf", &f.upsilon_inf, dim)?)?;
    let pair = BogoliubovPair {
        u: from_rows("u", &f.u, dim)?,
        v: from_rows("v", &f.v, dim)?,
        t_from: 0.0,
        t_to: f.diagnostics.t_final,
    };
    Ok(DiagonalizationResult {
        upsilon_inf,
        e_shift: f.e_shift,
        e_inf: f.e_inf,
        pair,
        diagnostics: f.diagnostics,
        trace: Vec::new(),
    })
}

pub fn result_to_json(result: &DiagonalizationResult) -> String {
    let f = ResultFile {
        upsilon_inf: to_rows(result.upsilon_inf.matrix()),
        e_shift: result.e_shift,
        e_inf: result.e_inf,
        u: to_rows(&result.pair.u),
        v: to_rows(&result.pair.v),
        diagnostics: result.diagnostics.clone(),
    };
    serde_json::to_string_pretty(&f).expect("result serializes") + "\n"
}

pub fn load_model(path: impl AsRef<Path>) -> Result<QuadraticModel> {
    parse_model(&fs::read_to_string(path)?)
}

pub fn save_model(path: impl AsRef<Path>, model: &QuadraticModel) -> Result<()> {
    Ok(fs::write(path, model_to_json(model))?)
}

pub fn load_result(path: impl AsRef<Path>) -> Result<DiagonalizationResult> {
    parse_result(&fs::read_to_string(path)?)
}

pub fn save_result(path: impl AsRef<Path>, result: &DiagonalizationResult) -> Result<()> {
    Ok(fs::write(path, result_to_json(result))?)
}

/// Parses `"re,im"` or a bare `"re"`.
pub fn parse_complex(s: &str) -> Result<Complex64> {
    let bad = || Error::Parse(format!("expected a complex scalar as \"re,im\", got {s:?}"));
    let mut parts = s.split(',');
    let re: f64 = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let im: f64 = match parts.next() {
        Some(p) => p.trim().parse().map_err(|_| bad())?,
        None => 0.0,
    };
    if parts.next().is_some() || !re.is_finite() || !im.is_finite() {
        return Err(bad());
    }
    Ok(Complex64::new(re, im))
}
