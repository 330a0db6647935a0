//! Per-route cost models and their half-quadratic weights.
//!
//! Every model is a function `f(t)` of the shipped volume `t >= 0`. A model is
//! half-quadratic when `f(t) = inf_w { w t^2 + psi(w) }` for some convex `psi`,
//! in which case the minimizing weight is `w*(t) = f'(t) / (2t)` and the
//! quadratic `w*(t0) t^2 + (f(t0) - w*(t0) t0^2)` touches `f` at `t0` and lies
//! above it everywhere else. The solver only ever needs the weight, so each
//! model provides it in closed form.
//!
//! | kind       | `f(t)`                  | weight used by the solver     |
//! |------------|-------------------------|-------------------------------|
//! | `Sqt`      | `c t^2`                 | `c`                           |
//! | `QtAffine` | `a t^2 + b t`           | `2a` (affine KKT, see solver) |
//! | `L1Approx` | `c sqrt(t^2 + beta^2)`  | `c / (2 sqrt(t^2 + beta^2))`  |
//! | `L0Approx` | `c t^2 / (beta^2 + t^2)`| `c beta^2 / (beta^2 + t^2)^2` |

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for weights, relative to the largest cost coefficient.
pub const OMEGA_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CostKind {
    /// Simple quadratic transport, `c t^2`.
    #[serde(rename = "sqt")]
    Sqt,
    /// Quadratic with a linear term, `a t^2 + b t`.
    #[serde(rename = "qt")]
    QtAffine,
    /// Smooth surrogate of the linear cost, `c sqrt(t^2 + beta^2)`.
    #[serde(rename = "l1")]
    L1Approx,
    /// Smooth surrogate of the route-counting cost, `c t^2 / (beta^2 + t^2)`.
    #[serde(rename = "l0")]
    L0Approx,
}

impl CostKind {
    pub fn name(self) -> &'static str {
        match self {
            CostKind::Sqt => "sqt",
            CostKind::QtAffine => "qt",
            CostKind::L1Approx => "l1",
            CostKind::L0Approx => "l0",
        }
    }

    /// Models whose solver weight does not depend on the plan.
    pub fn is_quadratic(self) -> bool {
        matches!(self, CostKind::Sqt | CostKind::QtAffine)
    }
}

impl std::str::FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sqt" => Ok(CostKind::Sqt),
            "qt" => Ok(CostKind::QtAffine),
            "l1" => Ok(CostKind::L1Approx),
            "l0" => Ok(CostKind::L0Approx),
            other => Err(Error::InvalidParameter(format!(
                "unknown cost model {other:?} (expected sqt, qt, l1 or l0)"
            ))),
        }
    }
}

impl std::fmt::Display for CostKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A cost model over an `m x n` grid of routes.
///
/// `coef` holds `c` (or `a` for [`CostKind::QtAffine`]); `linear` holds `b`
/// and is only present for the affine model.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    kind: CostKind,
    coef: Array2<f64>,
    linear: Option<Array2<f64>>,
    beta2: f64,
    omega_floor: f64,
}

fn check_matrix(what: &'static str, m: &Array2<f64>, strictly_positive: bool) -> Result<()> {
    for ((i, j), &v) in m.indexed_iter() {
        let bad = !v.is_finite() || if strictly_positive { v <= 0.0 } else { v < 0.0 };
        if bad {
            let rel = if strictly_positive { "> 0" } else { ">= 0" };
            return Err(Error::InvalidParameter(format!(
                "{what}[{i}][{j}] = {v} must be finite and {rel}"
            )));
        }
    }
    Ok(())
}

fn check_beta2(beta2: f64) -> Result<()> {
    if beta2.is_finite() && beta2 > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "beta2 = {beta2} must be finite and > 0"
        )))
    }
}

impl CostModel {
    fn build(
        kind: CostKind,
        coef: Array2<f64>,
        linear: Option<Array2<f64>>,
        beta2: f64,
    ) -> Self {
        let max_coef = coef.iter().cloned().fold(0.0, f64::max);
        CostModel {
            kind,
            coef,
            linear,
            beta2,
            omega_floor: OMEGA_FLOOR_REL * max_coef,
        }
    }

    pub fn sqt(c: Array2<f64>) -> Result<Self> {
        check_matrix("c", &c, true)?;
        Ok(Self::build(CostKind::Sqt, c, None, 0.0))
    }

    pub fn qt_affine(a: Array2<f64>, b: Array2<f64>) -> Result<Self> {
        check_matrix("a", &a, true)?;
        check_matrix("b", &b, false)?;
        if a.dim() != b.dim() {
            return Err(Error::ShapeMismatch {
                what: "b",
                expected: a.dim(),
                found: b.dim(),
            });
        }
        Ok(Self::build(CostKind::QtAffine, a, Some(b), 0.0))
    }

    pub fn l1(c: Array2<f64>, beta2: f64) -> Result<Self> {
        check_matrix("c", &c, true)?;
        check_beta2(beta2)?;
        Ok(Self::build(CostKind::L1Approx, c, None, beta2))
    }

    pub fn l0(c: Array2<f64>, beta2: f64) -> Result<Self> {
        check_matrix("c", &c, true)?;
        check_beta2(beta2)?;
        Ok(Self::build(CostKind::L0Approx, c, None, beta2))
    }

    /// Builds a model of the given kind from a coefficient matrix. For the
    /// affine model `coef` is `a` and `linear` must be supplied.
    pub fn new(
        kind: CostKind,
        coef: Array2<f64>,
        linear: Option<Array2<f64>>,
        beta2: Option<f64>,
    ) -> Result<Self> {
        let need_beta = || {
            beta2.ok_or_else(|| {
                Error::InvalidParameter(format!("model {kind} requires beta2"))
            })
        };
        match kind {
            CostKind::Sqt => Self::sqt(coef),
            CostKind::QtAffine => {
                let b = linear.ok_or_else(|| {
                    Error::InvalidParameter("model qt requires the linear coefficients b".into())
                })?;
                Self::qt_affine(coef, b)
            }
            CostKind::L1Approx => Self::l1(coef, need_beta()?),
            CostKind::L0Approx => Self::l0(coef, need_beta()?),
        }
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coef.dim()
    }

    /// `c`, or `a` for the affine model.
    pub fn coefficients(&self) -> &Array2<f64> {
        &self.coef
    }

    /// `b` for the affine model.
    pub fn linear(&self) -> Option<&Array2<f64>> {
        self.linear.as_ref()
    }

    pub fn beta2(&self) -> Option<f64> {
        match self.kind {
            CostKind::L1Approx | CostKind::L0Approx => Some(self.beta2),
            _ => None,
        }
    }

    /// Same model with every cost coefficient multiplied by `k > 0`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidParameter(format!("scale {k} must be > 0")));
        }
        let coef = &self.coef * k;
        let linear = self.linear.as_ref().map(|b| b * k);
        Ok(Self::build(self.kind, coef, linear, self.beta2))
    }

    fn check_index(&self, i: usize, j: usize) -> Result<()> {
        let (m, n) = self.shape();
        if i < m && j < n {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { i, j, m, n })
        }
    }

    /// `f_ij(t)`, as written (the L1 surrogate keeps its `c beta` offset at 0).
    pub fn cost_value(&self, i: usize, j: usize, t: f64) -> Result<f64> {
        self.check_index(i, j)?;
        Ok(self.value(i, j, t))
    }

    #[inline]
    pub(crate) fn value(&self, i: usize, j: usize, t: f64) -> f64 {
        let c = self.coef[[i, j]];
        match self.kind {
            CostKind::Sqt => c * t * t,
            CostKind::QtAffine => {
                let b = self.linear.as_ref().map_or(0.0, |b| b[[i, j]]);
                c * t * t + b * t
            }
            CostKind::L1Approx => c * (t * t + self.beta2).sqrt(),
            CostKind::L0Approx => {
                let t2 = t * t;
                c * t2 / (self.beta2 + t2)
            }
        }
    }

    /// Weight used by the solver for route `(i, j)` at volume `t`, clamped to
    /// `[1e-12 * max(c), omega(0)]` so that `1 / omega` stays finite.
    pub fn omega(&self, i: usize, j: usize, t: f64) -> Result<f64> {
        self.check_index(i, j)?;
        Ok(self.weight(i, j, t))
    }

    #[inline]
    pub(crate) fn weight(&self, i: usize, j: usize, t: f64) -> f64 {
        let w = self.tangent_weight(i, j, t);
        let ceiling = self.tangent_weight(i, j, 0.0);
        w.min(ceiling).max(self.omega_floor)
    }

    /// Unclamped closed-form weight.
    #[inline]
    fn tangent_weight(&self, i: usize, j: usize, t: f64) -> f64 {
        let c = self.coef[[i, j]];
        match self.kind {
            CostKind::Sqt => c,
            CostKind::QtAffine => 2.0 * c,
            CostKind::L1Approx => 0.5 * c / (t * t + self.beta2).sqrt(),
            CostKind::L0Approx => {
                let d = self.beta2 + t * t;
                c * self.beta2 / (d * d)
            }
        }
    }

    /// Tangent quadratic of `f_ij` at `t0`.
    ///
    /// Uses the unclamped weight, so for the half-quadratic models (`Sqt`,
    /// `L1Approx`, `L0Approx`) the result upper-bounds `f_ij` on `t >= 0`. For
    /// `QtAffine` the weight is the solver's `2a` and no bound is implied.
    pub fn majorizer(&self, i: usize, j: usize, t0: f64) -> Result<Majorizer> {
        self.check_index(i, j)?;
        let t0 = t0.max(0.0);
        let weight = self.tangent_weight(i, j, t0);
        let offset = self.value(i, j, t0) - weight * t0 * t0;
        Ok(Majorizer { weight, offset })
    }

    /// Numerical spot-check of the half-quadratic conditions for route `(i, j)`.
    pub fn validate_potential(&self, i: usize, j: usize, grid: &GridSpec) -> Result<PotentialReport> {
        self.check_index(i, j)?;
        Ok(validate_with(|t| self.value(i, j, t), grid))
    }
}

/// `Q(t) = weight * t^2 + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Majorizer {
    pub weight: f64,
    pub offset: f64,
}

impl Majorizer {
    pub fn eval(&self, t: f64) -> f64 {
        self.weight * t * t + self.offset
    }
}

/// Log-spaced sample points on `[t_min, t_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            t_min: 1e-8,
            t_max: 1e3,
            points: 200,
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        log_space(self.t_min, self.t_max, self.points)
    }
}

pub(crate) fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialReport {
    /// `f(0)`, the minimum value `m` of a valid potential.
    pub f0: f64,
    /// `f(t) >= f(0)` at every grid point.
    pub bounded_below_ok: bool,
    /// `f` non-decreasing on the grid and `f' >= 0` by finite differences.
    pub monotone_ok: bool,
    /// Estimate of `lim_{t -> 0+} f'(t) / (2t)`; infinite when the ratio
    /// keeps growing towards the small end of the grid.
    pub m_estimate: f64,
    /// `f'(t) / (2t)` decays at the large end of the grid.
    pub tail_ok: bool,
    pub grid: Vec<f64>,
}

impl PotentialReport {
    pub fn is_half_quadratic(&self) -> bool {
        self.bounded_below_ok
            && self.monotone_ok
            && self.tail_ok
            && self.m_estimate.is_finite()
            && self.m_estimate > 0.0
    }
}

/// Smallest `t` at which the finite-difference ratio is trusted for the
/// `t -> 0+` limit; below this the step `h = 1e-6` dominates `t`.
const RATIO_T_MIN: f64 = 1e-4;

fn validate_with(f: impl Fn(f64) -> f64, spec: &GridSpec) -> PotentialReport {
    let grid = spec.points();
    let f0 = f(0.0);
    let values: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
    let scale = values.iter().fold(f0.abs(), |acc, v| acc.max(v.abs())).max(1.0);
    let slack = 1e-12 * scale;

    let bounded_below_ok = values.iter().all(|&v| v >= f0 - slack);

    let derivative = |t: f64| {
        let h = 1e-6 * t.max(1.0);
        if t > h {
            (f(t + h) - f(t - h)) / (2.0 * h)
        } else {
            (f(t + h) - f(t)) / h
        }
    };
    let slopes: Vec<f64> = grid.iter().map(|&t| derivative(t)).collect();
    let monotone_ok = values.windows(2).all(|w| w[1] >= w[0] - slack)
        && slopes.iter().all(|&d| d >= -1e-9 * scale);

    let ratios: Vec<(f64, f64)> = grid
        .iter()
        .zip(&slopes)
        .map(|(&t, &d)| (t, d / (2.0 * t)))
        .collect();

    // Compare the ratio at the small end with its value one decade higher: a
    // finite limit leaves it flat, a divergent one keeps growing.
    let near_zero = ratios.iter().find(|(t, _)| *t >= RATIO_T_MIN).copied();
    let m_estimate = match near_zero {
        Some((t0, r0)) => {
            let decade = ratios.iter().find(|(t, _)| *t >= 10.0 * t0).map(|&(_, r)| r);
            match decade {
                Some(r1) if r1 > 0.0 && r0 / r1 >= 1.5 => f64::INFINITY,
                _ => r0,
            }
        }
        None => f64::NAN,
    };

    let tail_ok = match ratios.last() {
        Some(&(t_end, r_end)) => {
            let decade = ratios
                .iter()
                .rev()
                .find(|(t, _)| *t <= t_end / 10.0)
                .map(|&(_, r)| r);
            let small_vs_m = m_estimate.is_finite() && r_end <= 1e-2 * m_estimate.abs();
            let decaying = decade.is_some_and(|r| r > 0.0 && r_end <= 0.5 * r);
            r_end >= -slack && (small_vs_m || decaying)
        }
        None => false,
    };

    PotentialReport {
        f0,
        bounded_below_ok,
        monotone_ok,
        m_estimate,
        tail_ok,
        grid,
    }
}
