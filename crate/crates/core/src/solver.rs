//! Primal-dual kernels.
//!
//! For fixed weights `w` the subproblem `min sum_ij w_ij x_ij^2` over the
//! transportation polytope has the KKT system
//!
//! ```text
//! w_ij x_ij - lambda_i - gamma_j - s_ij = -b_ij
//! sum_j x_ij = p_i,   sum_i x_ij = q_j,   s_ij x_ij = 0,   s, x >= 0
//! ```
//!
//! (`b = 0` except for the affine model). A projected Gauss-Seidel sweep
//! updates the non-negativity multipliers `s`, then every `lambda_i`, then
//! every `gamma_j`, each from the latest values of the others. The primal plan
//! is then `x = (lambda + gamma + s - b) / w`.
//!
//! [`solve_qtp`] runs that sweep to convergence once. [`solve_hqtp`] wraps it in
//! the reweighting loop: solve the weighted subproblem, recompute every weight
//! from the new plan, repeat. Because each weight gives a quadratic that
//! touches the cost at the current plan and lies above it elsewhere, the
//! objective never increases from one outer iteration to the next.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{kkt_with, objective_unchecked, KktResiduals, Problem, Solution};
use crate::potentials::{CostKind, CostModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    /// Keeps the `m x n` slack matrix `s`.
    #[default]
    Standard,
    /// Recomputes `s` on the fly from `lambda`, `gamma` and `b`.
    Lean,
}

impl std::str::FromStr for MemoryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(MemoryMode::Standard),
            "lean" => Ok(MemoryMode::Lean),
            other => Err(Error::InvalidParameter(format!(
                "unknown memory mode {other:?} (expected standard or lean)"
            ))),
        }
    }
}

/// How many dual sweeps run between two weight updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerSchedule {
    /// At least `inner_iters` sweeps, then continue until the duals settle
    /// (`inner_tol`) and the implied plan meets the marginals (`feas_tol`).
    /// Every subproblem is solved, so the objective descends monotonically
    /// and a rise is reported as [`Error::DescentViolation`].
    #[default]
    Converged,
    /// Exactly `inner_iters` sweeps per weight update (early exit on
    /// `inner_tol`). Cheaper per iteration but intermediate plans are not
    /// feasible, so descent is not checked.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Sweeps per weight update (the minimum under [`InnerSchedule::Converged`]).
    pub inner_iters: usize,
    /// Dual change per sweep below which the sweep is considered converged.
    pub inner_tol: f64,
    /// Sweep cap for a single subproblem.
    pub max_inner: usize,
    /// Relative objective change that ends the reweighting loop.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Marginal violation allowed at convergence, relative to `max(p, q)`.
    pub feas_tol: f64,
    pub memory_mode: MemoryMode,
    pub inner_schedule: InnerSchedule,
    pub record_trace: bool,
    /// Route `Sqt`/`QtAffine` models in [`solve_hqtp`] straight to [`solve_qtp`].
    pub quadratic_fast_path: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            inner_iters: 5,
            inner_tol: 1e-10,
            max_inner: 100_000,
            outer_tol: 1e-8,
            max_outer: 500,
            feas_tol: 1e-12,
            memory_mode: MemoryMode::Standard,
            inner_schedule: InnerSchedule::Converged,
            record_trace: true,
            quadratic_fast_path: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.inner_iters == 0 {
            return bad("inner_iters must be >= 1");
        }
        if self.max_inner < self.inner_iters {
            return bad("max_inner must be >= inner_iters");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be >= 1");
        }
        for (name, v) in [
            ("inner_tol", self.inner_tol),
            ("outer_tol", self.outer_tol),
            ("feas_tol", self.feas_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Lagrange multipliers: `lambda` per supplier, `gamma` per destination and
/// the non-negativity multipliers `s` per route (absent in lean mode).
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub s: Option<Array2<f64>>,
}

impl DualState {
    /// `lambda = gamma = 1`, `s = 0`.
    pub fn initial(m: usize, n: usize, mode: MemoryMode) -> Self {
        DualState {
            lambda: vec![1.0; m],
            gamma: vec![1.0; n],
            s: match mode {
                MemoryMode::Standard => Some(Array2::zeros((m, n))),
                MemoryMode::Lean => None,
            },
        }
    }

    pub fn mode(&self) -> MemoryMode {
        if self.s.is_some() {
            MemoryMode::Standard
        } else {
            MemoryMode::Lean
        }
    }

    pub(crate) fn check_shape(&self, m: usize, n: usize) -> Result<()> {
        if self.lambda.len() != m || self.gamma.len() != n {
            return Err(Error::ShapeMismatch {
                what: "dual state",
                expected: (m, n),
                found: (self.lambda.len(), self.gamma.len()),
            });
        }
        if let Some(s) = &self.s {
            if s.dim() != (m, n) {
                return Err(Error::ShapeMismatch {
                    what: "slack s",
                    expected: (m, n),
                    found: s.dim(),
                });
            }
        }
        Ok(())
    }

    /// Slack for route `(i, j)`: stored value, or `max(0, b - lambda - gamma)`.
    pub fn slack(&self, i: usize, j: usize, b: Option<&Array2<f64>>) -> f64 {
        match &self.s {
            Some(s) => s[[i, j]],
            None => {
                let bij = b.map_or(0.0, |b| b[[i, j]]);
                (bij - self.lambda[i] - self.gamma[j]).max(0.0)
            }
        }
    }

    /// Makes a stored `s` consistent with the current `lambda`, `gamma`.
    pub fn refresh_slack(&mut self, b: Option<&Array2<f64>>) {
        let DualState { lambda, gamma, s } = self;
        if let Some(s) = s {
            fill_slack(s, lambda, gamma, b);
        }
    }

    fn is_finite(&self) -> bool {
        self.lambda.iter().chain(&self.gamma).all(|v| v.is_finite())
    }
}

fn fill_slack(s: &mut Array2<f64>, lambda: &[f64], gamma: &[f64], b: Option<&Array2<f64>>) {
    for (i, mut row) in s.outer_iter_mut().enumerate() {
        let li = lambda[i];
        for (j, sij) in row.iter_mut().enumerate() {
            let bij = b.map_or(0.0, |b| b[[i, j]]);
            *sij = (bij - li - gamma[j]).max(0.0);
        }
    }
}

fn check_sweep_inputs(
    omega_bar: &Array2<f64>,
    b: Option<&Array2<f64>>,
    p: &[f64],
    q: &[f64],
    state: &DualState,
) -> Result<()> {
    let shape = (p.len(), q.len());
    if omega_bar.dim() != shape {
        return Err(Error::ShapeMismatch {
            what: "omega_bar",
            expected: shape,
            found: omega_bar.dim(),
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
    if let Some(v) = omega_bar.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "omega_bar entries must be finite and > 0, found {v}"
        )));
    }
    state.check_shape(shape.0, shape.1)
}

/// One projected Gauss-Seidel pass over the duals, in place.
///
/// Order: all `s`, then `lambda_i` for ascending `i`, then `gamma_j` for
/// ascending `j`. Returns the largest absolute change of any `lambda_i` or
/// `gamma_j`. `b = None` is the zero matrix.
pub fn dual_sweep(
    omega_bar: &Array2<f64>,
    b: Option<&Array2<f64>>,
    p: &[f64],
    q: &[f64],
    state: &mut DualState,
) -> Result<f64> {
    check_sweep_inputs(omega_bar, b, p, q, state)?;
    sweep(omega_bar, b, p, q, state, 1)
}

fn sweep(
    omega_bar: &Array2<f64>,
    b: Option<&Array2<f64>>,
    p: &[f64],
    q: &[f64],
    state: &mut DualState,
    sweep_no: usize,
) -> Result<f64> {
    let DualState { lambda, gamma, s } = state;
    let change = match s {
        Some(s) => {
            fill_slack(s, lambda, gamma, b);
            let s = &*s;
            update_multipliers(omega_bar, b, p, q, lambda, gamma, |i, j, _| s[[i, j]])
        }
        None => {
            // s is defined by the multipliers at the start of the pass, so the
            // old lambda must outlive its own update.
            let start = lambda.clone();
            update_multipliers(omega_bar, b, p, q, lambda, gamma, |i, j, gj| {
                let bij = b.map_or(0.0, |b| b[[i, j]]);
                (bij - start[i] - gj).max(0.0)
            })
        }
    };
    if !state.is_finite() || !change.is_finite() {
        return Err(Error::NonFiniteState { sweep: sweep_no });
    }
    Ok(change)
}

/// `lambda_i = (p_i - sum_j (gamma_j + s_ij - b_ij) wbar_ij) / sum_j wbar_ij`,
/// then the same for `gamma_j` with the fresh `lambda`. `slack(i, j, gamma_j)`
/// must see the start-of-pass `gamma_j`, which holds because `gamma` is only
/// written after its accumulation pass.
fn update_multipliers(
    omega_bar: &Array2<f64>,
    b: Option<&Array2<f64>>,
    p: &[f64],
    q: &[f64],
    lambda: &mut [f64],
    gamma: &mut [f64],
    slack: impl Fn(usize, usize, f64) -> f64,
) -> f64 {
    let mut change: f64 = 0.0;
    for (i, row) in omega_bar.outer_iter().enumerate() {
        let mut num = p[i];
        let mut den = 0.0;
        for (j, &wb) in row.iter().enumerate() {
            let bij = b.map_or(0.0, |b| b[[i, j]]);
            num -= (gamma[j] + slack(i, j, gamma[j]) - bij) * wb;
            den += wb;
        }
        let next = num / den;
        change = change.max((next - lambda[i]).abs());
        lambda[i] = next;
    }

    let n = gamma.len();
    let mut col_num = vec![0.0; n];
    let mut col_den = vec![0.0; n];
    for (i, row) in omega_bar.outer_iter().enumerate() {
        let li = lambda[i];
        for (j, &wb) in row.iter().enumerate() {
            let bij = b.map_or(0.0, |b| b[[i, j]]);
            col_num[j] += (li + slack(i, j, gamma[j]) - bij) * wb;
            col_den[j] += wb;
        }
    }
    for j in 0..n {
        let next = (q[j] - col_num[j]) / col_den[j];
        change = change.max((next - gamma[j]).abs());
        gamma[j] = next;
    }
    change
}

/// `x = wbar (lambda + gamma + s - b)`, with round-off negatives set to 0.
pub fn recover_primal(
    omega_bar: &Array2<f64>,
    b: Option<&Array2<f64>>,
    state: &DualState,
) -> Array2<f64> {
    let mut x = Array2::zeros(omega_bar.dim());
    recover_into(&mut x, omega_bar, b, state);
    x
}

/// Writes the plan into `x`; returns how many entries had to be clamped.
fn recover_into(
    x: &mut Array2<f64>,
    omega_bar: &Array2<f64>,
    b: Option<&Array2<f64>>,
    state: &DualState,
) -> usize {
    let mut clamped = 0;
    for ((i, j), xij) in x.indexed_iter_mut() {
        let bij = b.map_or(0.0, |b| b[[i, j]]);
        let v = omega_bar[[i, j]]
            * (state.lambda[i] + state.gamma[j] + state.slack(i, j, b) - bij);
        *xij = if v < 0.0 {
            clamped += 1;
            0.0
        } else {
            v
        };
    }
    clamped
}

/// Marginal violations of the plan the duals currently imply, without
/// materializing it.
fn implied_marginal_residual(
    omega_bar: &Array2<f64>,
    b: Option<&Array2<f64>>,
    p: &[f64],
    q: &[f64],
    state: &DualState,
) -> f64 {
    let mut col = vec![0.0; q.len()];
    let mut worst: f64 = 0.0;
    for (i, row) in omega_bar.outer_iter().enumerate() {
        let mut sum = 0.0;
        for (j, &wb) in row.iter().enumerate() {
            let bij = b.map_or(0.0, |b| b[[i, j]]);
            let v = wb * (state.lambda[i] + state.gamma[j] - bij).max(0.0);
            sum += v;
            col[j] += v;
        }
        worst = worst.max((sum - p[i]).abs());
    }
    col.iter()
        .zip(q)
        .fold(worst, |acc, (s, qj)| acc.max((s - qj).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub inner_sweeps: usize,
    pub elapsed_s: f64,
}

/// One record per outer iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub fn objectives(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.objective)
    }

    /// `F(x^{k+1}) <= F(x^k) + slack_rel * max(1, F(x^0))` for every step.
    pub fn is_monotone(&self, slack_rel: f64) -> bool {
        let Some(first) = self.records.first() else {
            return true;
        };
        let slack = slack_rel * first.objective.max(1.0);
        self.records
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective + slack)
    }
}

/// Slack on the per-step objective increase, relative to `max(1, F(x^0))`.
pub const DESCENT_SLACK: f64 = 1e-10;

struct Workspace<'a> {
    cost: &'a CostModel,
    b: Option<&'a Array2<f64>>,
    omega_bar: Array2<f64>,
    state: DualState,
    p: &'a [f64],
    q: &'a [f64],
    feas_abs: f64,
    sweeps: usize,
}

impl<'a> Workspace<'a> {
    fn new(problem: &'a Problem, opts: &SolverOptions) -> Self {
        let cost = problem.cost();
        let (m, n) = (problem.m(), problem.n());
        let mut omega_bar = cost.coefficients().mapv(f64::recip);
        if cost.kind() == CostKind::QtAffine {
            omega_bar.mapv_inplace(|v| 0.5 * v);
        }
        Workspace {
            cost,
            b: cost.linear(),
            omega_bar,
            state: DualState::initial(m, n, opts.memory_mode),
            p: problem.p(),
            q: problem.q(),
            feas_abs: opts.feas_tol * problem.max_entry().max(f64::MIN_POSITIVE),
            sweeps: 0,
        }
    }

    fn sweep(&mut self) -> Result<f64> {
        self.sweeps += 1;
        sweep(&self.omega_bar, self.b, self.p, self.q, &mut self.state, self.sweeps)
    }

    /// Runs sweeps for one subproblem; returns `(sweeps run, converged)`.
    fn solve_subproblem(&mut self, min_sweeps: usize, max_sweeps: usize, opts: &SolverOptions) -> Result<(usize, bool)> {
        let mut count = 0;
        while count < max_sweeps {
            let change = self.sweep()?;
            count += 1;
            if change <= opts.inner_tol
                && count >= min_sweeps
                && implied_marginal_residual(&self.omega_bar, self.b, self.p, self.q, &self.state) <= self.feas_abs
            {
                return Ok((count, true));
            }
        }
        Ok((count, false))
    }

    fn kkt(&self, x: &Array2<f64>) -> KktResiduals {
        kkt_with(self.p, self.q, x, &self.state, |i, j| self.omega_bar[[i, j]].recip(), self.b)
    }
}

fn elapsed(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Quadratic transport (`Sqt` or `QtAffine`): the weights are constant, so a
/// single dual solve followed by one primal recovery gives the global minimum.
pub fn solve_qtp(problem: &Problem, opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    if !problem.cost().kind().is_quadratic() {
        return Err(Error::InvalidParameter(format!(
            "solve_qtp needs a quadratic cost model, got {}",
            problem.cost().kind()
        )));
    }
    let start = Instant::now();
    let mut ws = Workspace::new(problem, opts);
    let (sweeps, converged) = ws.solve_subproblem(1, opts.max_inner, opts)?;
    ws.state.refresh_slack(ws.b);

    let mut x = Array2::zeros((problem.m(), problem.n()));
    let clamped_entries = recover_into(&mut x, &ws.omega_bar, ws.b, &ws.state);
    let objective = objective_unchecked(ws.cost, &x);
    let kkt = ws.kkt(&x);
    let mut trace = ConvergenceTrace::default();
    if opts.record_trace {
        trace.records.push(TraceRecord {
            k: 0,
            objective,
            kkt,
            inner_sweeps: sweeps,
            elapsed_s: elapsed(start),
        });
    }
    let Workspace { state, .. } = ws;
    Ok(Solution {
        x,
        duals: state,
        objective,
        kkt,
        trace,
        converged,
        outer_iterations: 1,
        inner_sweeps: sweeps,
        clamped_entries,
    })
}

/// Half-quadratic transport: alternate between solving the weighted quadratic
/// subproblem and recomputing the weights from the new plan.
///
/// Quadratic models go through [`solve_qtp`] unless
/// `opts.quadratic_fast_path` is off, in which case they run the same loop
/// with constant weights.
pub fn solve_hqtp(problem: &Problem, opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    if problem.cost().kind().is_quadratic() && opts.quadratic_fast_path {
        return solve_qtp(problem, opts);
    }

    let start = Instant::now();
    let (m, n) = (problem.m(), problem.n());
    let mut ws = Workspace::new(problem, opts);
    let mut x = Array2::zeros((m, n));
    let mut trace = ConvergenceTrace::default();
    let check_descent = opts.inner_schedule == InnerSchedule::Converged;
    let min_sweeps = opts.inner_iters;
    let max_sweeps = match opts.inner_schedule {
        InnerSchedule::Converged => opts.max_inner,
        InnerSchedule::Fixed => opts.inner_iters,
    };

    let mut first_objective = None;
    let mut previous: Option<f64> = None;
    let mut converged = false;
    let mut outer = 0;
    let mut objective = f64::NAN;
    let mut kkt = KktResiduals::default();
    let mut clamped_entries = 0;

    for k in 0..opts.max_outer {
        outer = k + 1;
        let (sweeps, sub_converged) = match opts.inner_schedule {
            InnerSchedule::Converged => ws.solve_subproblem(min_sweeps, max_sweeps, opts)?,
            InnerSchedule::Fixed => {
                let mut count = 0;
                let mut change = f64::INFINITY;
                while count < max_sweeps && change > opts.inner_tol {
                    change = ws.sweep()?;
                    count += 1;
                }
                let feasible = implied_marginal_residual(&ws.omega_bar, ws.b, ws.p, ws.q, &ws.state)
                    <= ws.feas_abs;
                (count, feasible)
            }
        };
        ws.state.refresh_slack(ws.b);
        clamped_entries = recover_into(&mut x, &ws.omega_bar, ws.b, &ws.state);
        objective = objective_unchecked(ws.cost, &x);
        kkt = ws.kkt(&x);
        let f0 = *first_objective.get_or_insert(objective);

        if opts.record_trace {
            trace.records.push(TraceRecord {
                k,
                objective,
                kkt,
                inner_sweeps: sweeps,
                elapsed_s: elapsed(start),
            });
        }

        if let Some(prev) = previous {
            if check_descent && sub_converged && objective > prev + DESCENT_SLACK * f64::max(1.0, f0) {
                return Err(Error::DescentViolation {
                    iteration: k,
                    previous: prev,
                    current: objective,
                });
            }
            if sub_converged && (prev - objective).abs() <= opts.outer_tol * prev.max(1.0) {
                converged = true;
                break;
            }
        }
        previous = Some(objective);

        for ((i, j), wb) in ws.omega_bar.indexed_iter_mut() {
            *wb = ws.cost.weight(i, j, x[[i, j]]).recip();
        }
    }

    let sweeps = ws.sweeps;
    let Workspace { state, .. } = ws;
    Ok(Solution {
        x,
        duals: state,
        objective,
        kkt,
        trace,
        converged,
        outer_iterations: outer,
        inner_sweeps: sweeps,
        clamped_entries,
    })
}
