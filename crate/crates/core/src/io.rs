//! File formats: problem and solution JSON, trace and matrix CSV.
//!
//! Problem JSON (matrices row-major, one row per supplier):
//!
//! ```json
//! {"p": [1, 2], "q": [3],
//!  "cost": {"model": "l1", "c": [[1], [2]], "beta2": 0.001}}
//! ```
//!
//! `model` is one of `sqt`, `qt`, `l1`, `l0`. The affine model `qt` reads its
//! quadratic coefficients from `a` (falling back to `c`) and requires `b`.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_problem, KktResiduals, Problem, Solution};
use crate::potentials::{CostKind, CostModel};
use crate::solver::ConvergenceTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub model: CostKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub cost: CostSpec,
}

pub fn matrix_from_rows(what: &'static str, rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::ShapeMismatch {
            what,
            expected: (m, n),
            found: (m, bad.len()),
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((m, n), flat)
        .map_err(|e| Error::InvalidParameter(format!("{what}: {e}")))
}

pub fn matrix_to_rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.outer_iter().map(|r| r.to_vec()).collect()
}

impl CostSpec {
    pub fn to_model(&self) -> Result<CostModel> {
        let read = |what: &'static str, rows: &Option<Vec<Vec<f64>>>| -> Result<Option<Array2<f64>>> {
            rows.as_deref().map(|r| matrix_from_rows(what, r)).transpose()
        };
        let c = read("c", &self.c)?;
        let a = read("a", &self.a)?;
        let b = read("b", &self.b)?;
        let missing = |name: &str| {
            Error::InvalidParameter(format!("model {} requires \"{name}\"", self.model))
        };
        match self.model {
            CostKind::QtAffine => {
                let a = a.or(c).ok_or_else(|| missing("a"))?;
                let b = b.ok_or_else(|| missing("b"))?;
                CostModel::qt_affine(a, b)
            }
            kind => {
                let c = c.ok_or_else(|| missing("c"))?;
                CostModel::new(kind, c, None, self.beta2)
            }
        }
    }

    pub fn from_model(model: &CostModel) -> Self {
        let coef = Some(matrix_to_rows(model.coefficients()));
        match model.kind() {
            CostKind::QtAffine => CostSpec {
                model: CostKind::QtAffine,
                c: None,
                a: coef,
                b: model.linear().map(matrix_to_rows),
                beta2: None,
            },
            kind => CostSpec {
                model: kind,
                c: coef,
                a: None,
                b: None,
                beta2: model.beta2(),
            },
        }
    }
}

impl ProblemFile {
    pub fn to_problem(&self) -> Result<Problem> {
        validate_problem(self.p.clone(), self.q.clone(), self.cost.to_model()?)
    }

    pub fn from_problem(problem: &Problem) -> Self {
        ProblemFile {
            p: problem.p().to_vec(),
            q: problem.q().to_vec(),
            cost: CostSpec::from_model(problem.cost()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("problem JSON: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationCounts {
    pub outer: usize,
    pub inner_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub x: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub objective: f64,
    pub residuals: KktResiduals,
    pub iterations: IterationCounts,
    pub converged: bool,
}

impl From<&Solution> for SolutionFile {
    fn from(sol: &Solution) -> Self {
        SolutionFile {
            x: matrix_to_rows(&sol.x),
            lambda: sol.duals.lambda.clone(),
            gamma: sol.duals.gamma.clone(),
            objective: sol.objective,
            residuals: sol.kkt,
            iterations: IterationCounts {
                outer: sol.outer_iterations,
                inner_total: sol.inner_sweeps,
            },
            converged: sol.converged,
        }
    }
}

impl SolutionFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("solution JSON: {e}")))
    }

    pub fn plan(&self) -> Result<Array2<f64>> {
        matrix_from_rows("x", &self.x)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const TRACE_HEADER: &str = "k,objective,stationarity,row,col,compl,elapsed_s";

pub fn write_trace_csv(trace: &ConvergenceTrace, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in &trace.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.k,
            fmt_f64(r.objective),
            fmt_f64(r.kkt.stationarity),
            fmt_f64(r.kkt.row),
            fmt_f64(r.kkt.col),
            fmt_f64(r.kkt.complementarity),
            fmt_f64(r.elapsed_s),
        )?;
    }
    Ok(())
}

pub fn write_matrix_csv(x: &Array2<f64>, mut w: impl Write) -> std::io::Result<()> {
    for row in x.outer_iter() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// A vector as a single comma-separated row.
pub fn write_vector_csv(v: &[f64], mut w: impl Write) -> std::io::Result<()> {
    let line: Vec<String> = v.iter().map(|&x| fmt_f64(x)).collect();
    writeln!(w, "{}", line.join(","))
}
