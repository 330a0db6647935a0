//! Transportation problem instances, objective evaluation and KKT residuals.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::CostModel;
use crate::solver::{ConvergenceTrace, DualState};

/// Relative tolerance on `|sum p - sum q|`.
pub const BALANCE_TOL: f64 = 1e-12;

/// A validated balanced instance: `m` suppliers with capacities `p`, `n`
/// destinations with demands `q`, and a per-route cost model.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    p: Vec<f64>,
    q: Vec<f64>,
    cost: CostModel,
}

impl Problem {
    pub fn m(&self) -> usize {
        self.p.len()
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    /// Total shipped mass, `sum p`.
    pub fn mass(&self) -> f64 {
        self.p.iter().sum()
    }

    /// `max(max p, max q)`, the scale used for feasibility tolerances.
    pub fn max_entry(&self) -> f64 {
        self.p
            .iter()
            .chain(&self.q)
            .cloned()
            .fold(0.0, f64::max)
    }

    /// Same supplies and demands under a different cost model.
    pub fn with_cost(&self, cost: CostModel) -> Result<Problem> {
        validate_problem(self.p.clone(), self.q.clone(), cost)
    }
}

/// Validates supplies, demands and the cost model's shape.
///
/// Never rebalances: an instance whose totals differ by more than
/// `1e-12 * max(sum p, sum q, 1)` is rejected.
pub fn validate_problem(p: Vec<f64>, q: Vec<f64>, cost: CostModel) -> Result<Problem> {
    let (m, n) = (p.len(), q.len());
    if m == 0 || n == 0 {
        return Err(Error::EmptyInstance { m, n });
    }
    if cost.shape() != (m, n) {
        return Err(Error::ShapeMismatch {
            what: "cost matrix",
            expected: (m, n),
            found: cost.shape(),
        });
    }
    for (vector, values) in [("p", &p), ("q", &q)] {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{vector}[{index}] = {value} is not finite"
                )));
            }
            if value < 0.0 {
                return Err(Error::NegativeEntry {
                    vector,
                    index,
                    value,
                });
            }
        }
    }
    let supply: f64 = p.iter().sum();
    let demand: f64 = q.iter().sum();
    if (supply - demand).abs() > BALANCE_TOL * supply.max(demand).max(1.0) {
        return Err(Error::Unbalanced { supply, demand });
    }
    Ok(Problem { p, q, cost })
}

fn check_plan_shape(problem: &Problem, x: &Array2<f64>) -> Result<()> {
    if x.dim() != (problem.m(), problem.n()) {
        return Err(Error::ShapeMismatch {
            what: "transport plan",
            expected: (problem.m(), problem.n()),
            found: x.dim(),
        });
    }
    Ok(())
}

/// `F(x) = sum_ij f_ij(max(x_ij, 0))`.
pub fn objective(problem: &Problem, x: &Array2<f64>) -> Result<f64> {
    check_plan_shape(problem, x)?;
    Ok(objective_unchecked(problem.cost(), x))
}

pub(crate) fn objective_unchecked(cost: &CostModel, x: &Array2<f64>) -> f64 {
    x.indexed_iter()
        .map(|((i, j), &v)| cost.value(i, j, v.max(0.0)))
        .sum()
}

/// Largest violation of the row and column sum constraints.
pub fn marginal_residuals(p: &[f64], q: &[f64], x: &Array2<f64>) -> (f64, f64) {
    let mut col = vec![0.0; q.len()];
    let mut row_res: f64 = 0.0;
    for (i, r) in x.outer_iter().enumerate() {
        let mut sum = 0.0;
        for (j, &v) in r.iter().enumerate() {
            sum += v;
            col[j] += v;
        }
        row_res = row_res.max((sum - p[i]).abs());
    }
    let col_res = col
        .iter()
        .zip(q)
        .fold(0.0_f64, |acc, (s, qj)| acc.max((s - qj).abs()));
    (row_res, col_res)
}

/// Violations of the KKT system of `min sum_ij (w_ij x_ij^2 / 2 + b_ij x_ij)`
/// subject to the marginals and `x >= 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `max |w x - lambda - gamma - s + b|`
    pub stationarity: f64,
    pub row: f64,
    pub col: f64,
    /// `max |s x|`
    pub complementarity: f64,
    /// `max(0, -min s)`
    pub dual_feas: f64,
    /// `max(0, -min x)`
    pub primal_feas: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        [
            self.stationarity,
            self.row,
            self.col,
            self.complementarity,
            self.dual_feas,
            self.primal_feas,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// KKT residuals of `(x, duals)` for weights `omega` and linear terms `b`
/// (`None` means `b = 0`). When `duals.s` is absent the slack is recomputed
/// as `max(0, b - lambda - gamma)`.
pub fn kkt_residuals(
    problem: &Problem,
    x: &Array2<f64>,
    duals: &DualState,
    omega: &Array2<f64>,
    b: Option<&Array2<f64>>,
) -> Result<KktResiduals> {
    let shape = (problem.m(), problem.n());
    check_plan_shape(problem, x)?;
    if omega.dim() != shape {
        return Err(Error::ShapeMismatch {
            what: "omega",
            expected: shape,
            found: omega.dim(),
        });
    }
    if let Some(b) = b {
        if b.dim() != shape {
            return Err(Error::ShapeMismatch {
                what: "b",
                expected: shape,
                found: b.dim(),
            });
        }
    }
    duals.check_shape(shape.0, shape.1)?;
    Ok(kkt_with(problem.p(), problem.q(), x, duals, |i, j| omega[[i, j]], b))
}

pub(crate) fn kkt_with(
    p: &[f64],
    q: &[f64],
    x: &Array2<f64>,
    duals: &DualState,
    omega_at: impl Fn(usize, usize) -> f64,
    b: Option<&Array2<f64>>,
) -> KktResiduals {
    let mut res = KktResiduals::default();
    for ((i, j), &xij) in x.indexed_iter() {
        let bij = b.map_or(0.0, |b| b[[i, j]]);
        let lg = duals.lambda[i] + duals.gamma[j];
        let s = match &duals.s {
            Some(s) => s[[i, j]],
            None => (bij - lg).max(0.0),
        };
        let stat = (omega_at(i, j) * xij - lg - s + bij).abs();
        res.stationarity = res.stationarity.max(stat);
        res.complementarity = res.complementarity.max((s * xij).abs());
        if s < 0.0 {
            res.dual_feas = res.dual_feas.max(-s);
        }
        if xij < 0.0 {
            res.primal_feas = res.primal_feas.max(-xij);
        }
    }
    let (row, col) = marginal_residuals(p, q, x);
    res.row = row;
    res.col = col;
    res
}

/// Outcome of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Array2<f64>,
    pub duals: DualState,
    /// `F(x)` under the problem's cost model.
    pub objective: f64,
    /// Residuals of the last quadratic subproblem.
    pub kkt: KktResiduals,
    pub trace: ConvergenceTrace,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_sweeps: usize,
    /// Plan entries that came out negative from round-off and were set to 0.
    pub clamped_entries: usize,
}
