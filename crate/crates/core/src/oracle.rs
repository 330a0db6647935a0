//! Brute-force reference solutions for instances with at most two degrees of
//! freedom.
//!
//! Fixing the top-left `(m-1) x (n-1)` block of the plan determines the rest
//! through the marginals, so the transportation polytope becomes a segment
//! (`d = 1`) or a polygon (`d = 2`) in the free variables. The oracle walks a
//! uniform grid over it, evaluating the same cost functions the solver uses.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{objective_unchecked, Problem};
use crate::potentials::CostKind;

pub const DEFAULT_GRID_POINTS: usize = 2001;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub x_star: Array2<f64>,
    pub objective_star: f64,
    /// Number of free variables, `(m-1)(n-1)`.
    pub dof: usize,
    /// Grid spacing along the first free variable (0 when `dof = 0`).
    pub grid_resolution: f64,
}

/// The plan as an affine function of the free variables:
/// `x = base + sum_k theta_k * dirs[k]`.
struct Parametrization {
    m: usize,
    n: usize,
    base: Vec<f64>,
    dirs: Vec<Vec<f64>>,
    scale: f64,
}

impl Parametrization {
    fn new(p: &[f64], q: &[f64]) -> Result<Self> {
        let (m, n) = (p.len(), q.len());
        let dof = (m - 1) * (n - 1);
        if dof > 2 {
            return Err(Error::TooManyDegreesOfFreedom { dof });
        }
        // theta = 0: ship everything through the last row and column.
        let mut base = vec![0.0; m * n];
        for i in 0..m - 1 {
            base[i * n + n - 1] = p[i];
        }
        for j in 0..n - 1 {
            base[(m - 1) * n + j] = q[j];
        }
        let corner = p[m - 1] - q[..n - 1].iter().sum::<f64>();
        base[(m - 1) * n + n - 1] = corner;

        let mut dirs = Vec::with_capacity(dof);
        for i in 0..m - 1 {
            for j in 0..n - 1 {
                let mut d = vec![0.0; m * n];
                d[i * n + j] = 1.0;
                d[i * n + n - 1] = -1.0;
                d[(m - 1) * n + j] = -1.0;
                d[(m - 1) * n + n - 1] = 1.0;
                dirs.push(d);
            }
        }
        let scale = p.iter().chain(q).cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        Ok(Parametrization {
            m,
            n,
            base,
            dirs,
            scale,
        })
    }

    fn dof(&self) -> usize {
        self.dirs.len()
    }

    fn tol(&self) -> f64 {
        1e-12 * self.scale
    }

    fn entry(&self, e: usize, theta: &[f64]) -> f64 {
        self.base[e]
            + theta
                .iter()
                .zip(&self.dirs)
                .map(|(t, d)| t * d[e])
                .sum::<f64>()
    }

    fn is_feasible(&self, theta: &[f64]) -> bool {
        (0..self.base.len()).all(|e| self.entry(e, theta) >= -self.tol())
    }

    fn plan(&self, theta: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((self.m, self.n), |(i, j)| {
            self.entry(i * self.n + j, theta).max(0.0)
        })
    }

    /// Feasible interval of `theta[axis]` with every other coordinate fixed.
    fn interval(&self, theta: &[f64], axis: usize) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for e in 0..self.base.len() {
            let slope = self.dirs[axis][e];
            let mut rest = theta.to_vec();
            rest[axis] = 0.0;
            let offset = self.entry(e, &rest);
            if slope > 0.0 {
                lo = lo.max(-offset / slope);
            } else if slope < 0.0 {
                hi = hi.min(-offset / slope);
            } else if offset < -self.tol() {
                return None;
            }
        }
        if lo <= hi + self.tol() {
            Some((lo, hi.max(lo)))
        } else {
            None
        }
    }

    /// Vertices of the feasible polygon (`dof = 2`) or segment (`dof = 1`).
    fn vertices(&self) -> Vec<Vec<f64>> {
        match self.dof() {
            0 => vec![vec![]],
            1 => self
                .interval(&[0.0], 0)
                .map(|(lo, hi)| vec![vec![lo], vec![hi]])
                .unwrap_or_default(),
            _ => {
                let count = self.base.len();
                let mut out = Vec::new();
                for e1 in 0..count {
                    for e2 in e1 + 1..count {
                        let (a11, a12) = (self.dirs[0][e1], self.dirs[1][e1]);
                        let (a21, a22) = (self.dirs[0][e2], self.dirs[1][e2]);
                        let det = a11 * a22 - a12 * a21;
                        if det.abs() < 1e-12 {
                            continue;
                        }
                        let (r1, r2) = (-self.base[e1], -self.base[e2]);
                        let theta = vec![(r1 * a22 - a12 * r2) / det, (a11 * r2 - r1 * a21) / det];
                        if self.is_feasible(&theta) {
                            out.push(theta);
                        }
                    }
                }
                out
            }
        }
    }
}

struct Evaluator<'a> {
    problem: &'a Problem,
    param: Parametrization,
}

impl Evaluator<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        let cost = self.problem.cost();
        let n = self.param.n;
        (0..self.param.base.len())
            .map(|e| cost.value(e / n, e % n, self.param.entry(e, theta).max(0.0)))
            .sum()
    }

    /// Exact minimizer of a quadratic cost along `axis` on `[lo, hi]`.
    fn quadratic_line_min(&self, theta: &[f64], axis: usize, lo: f64, hi: f64) -> f64 {
        let cost = self.problem.cost();
        let n = self.param.n;
        let (mut a2, mut a1) = (0.0, 0.0);
        let mut rest = theta.to_vec();
        rest[axis] = 0.0;
        for e in 0..self.param.base.len() {
            let (i, j) = (e / n, e % n);
            let d = self.param.dirs[axis][e];
            if d == 0.0 {
                continue;
            }
            let x0 = self.param.entry(e, &rest);
            let a = cost.coefficients()[[i, j]];
            let b = cost.linear().map_or(0.0, |b| b[[i, j]]);
            a2 += a * d * d;
            a1 += 2.0 * a * x0 * d + b * d;
        }
        if a2 > 0.0 {
            (-a1 / (2.0 * a2)).clamp(lo, hi)
        } else {
            lo
        }
    }

    /// Best value along `axis` on `[lo, hi]`: exact for quadratic models,
    /// grid search plus local refinement otherwise.
    fn line_min(&self, theta: &[f64], axis: usize, lo: f64, hi: f64, points: usize) -> (f64, f64) {
        let at = |t: f64| {
            let mut th = theta.to_vec();
            th[axis] = t;
            self.value(&th)
        };
        if self.problem.cost().kind().is_quadratic() {
            let t = self.quadratic_line_min(theta, axis, lo, hi);
            return (t, at(t));
        }
        let step = if points > 1 { (hi - lo) / (points - 1) as f64 } else { 0.0 };
        let mut best = (lo, at(lo));
        for k in 1..points {
            let t = if k + 1 == points { hi } else { lo + step * k as f64 };
            let v = at(t);
            if v < best.1 {
                best = (t, v);
            }
        }
        refine(at, best, lo, hi, step)
    }
}

/// Golden-section search on `[t - step, t + step]`, keeping the better of the
/// grid point and the refined point.
fn refine(f: impl Fn(f64) -> f64, best: (f64, f64), lo: f64, hi: f64, step: f64) -> (f64, f64) {
    if step <= 0.0 {
        return best;
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    let v = f(t);
    if v < best.1 {
        (t, v)
    } else {
        best
    }
}

/// Minimizes the problem's cost over the transportation polytope by
/// enumeration. Only instances with `(m-1)(n-1) <= 2` are supported.
pub fn oracle_solve(problem: &Problem, grid_points: usize) -> Result<OracleResult> {
    if grid_points < 2 {
        return Err(Error::InvalidParameter("grid_points must be >= 2".into()));
    }
    let param = Parametrization::new(problem.p(), problem.q())?;
    let dof = param.dof();
    let ev = Evaluator { problem, param };

    let (theta, resolution) = match dof {
        0 => (vec![], 0.0),
        1 => {
            let (lo, hi) = ev.param.interval(&[0.0], 0).ok_or(Error::InfeasibleParametrization)?;
            let (t, _) = ev.line_min(&[0.0], 0, lo, hi, grid_points);
            (vec![t], (hi - lo) / (grid_points - 1) as f64)
        }
        _ => {
            let verts = ev.param.vertices();
            if verts.is_empty() {
                return Err(Error::InfeasibleParametrization);
            }
            let lo = verts.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
            let hi = verts.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
            let step = (hi - lo) / (grid_points - 1) as f64;
            // Profile over the first coordinate: best second coordinate for each.
            let profile = |t1: f64| -> Option<(f64, f64)> {
                let (lo2, hi2) = ev.param.interval(&[t1, 0.0], 1)?;
                Some(ev.line_min(&[t1, 0.0], 1, lo2, hi2, grid_points))
            };
            let mut best: Option<(f64, f64, f64)> = None;
            for k in 0..grid_points {
                let t1 = if k + 1 == grid_points { hi } else { lo + step * k as f64 };
                if let Some((t2, v)) = profile(t1) {
                    if best.is_none_or(|b| v < b.2) {
                        best = Some((t1, t2, v));
                    }
                }
            }
            let (t1, _, v) = best.ok_or(Error::InfeasibleParametrization)?;
            let objective_of = |t: f64| profile(t).map_or(f64::INFINITY, |(_, v)| v);
            let (t1, _) = refine(objective_of, (t1, v), lo, hi, step);
            let (t2, _) = profile(t1).ok_or(Error::InfeasibleParametrization)?;
            (vec![t1, t2], step)
        }
    };

    let x_star = ev.param.plan(&theta);
    let objective_star = objective_unchecked(problem.cost(), &x_star);
    Ok(OracleResult {
        x_star,
        objective_star,
        dof,
        grid_resolution: resolution,
    })
}

/// Exact minimum of the linear cost `sum c_ij x_ij` over the polytope, found by
/// comparing every vertex. The cost model supplies `c`; its kind is ignored.
pub fn linear_oracle(problem: &Problem) -> Result<OracleResult> {
    let param = Parametrization::new(problem.p(), problem.q())?;
    let dof = param.dof();
    let c = problem.cost().coefficients();
    let mut best: Option<(Array2<f64>, f64)> = None;
    for theta in param.vertices() {
        let x = param.plan(&theta);
        let v = (&x * c).sum();
        if best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((x, v));
        }
    }
    let (x_star, objective_star) = best.ok_or(Error::InfeasibleParametrization)?;
    Ok(OracleResult {
        x_star,
        objective_star,
        dof,
        grid_resolution: 0.0,
    })
}

/// True for models whose total cost is convex in the plan.
pub fn is_convex(kind: CostKind) -> bool {
    !matches!(kind, CostKind::L0Approx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{marginal_residuals, validate_problem};
    use crate::potentials::CostModel;
    use ndarray::array;

    #[test]
    fn no_freedom() {
        let pr = validate_problem(vec![5.0], vec![5.0], CostModel::l0(array![[2.0]], 0.1).unwrap()).unwrap();
        let r = oracle_solve(&pr, DEFAULT_GRID_POINTS).unwrap();
        assert_eq!(r.dof, 0);
        assert_eq!(r.x_star, array![[5.0]]);

        let pr = validate_problem(vec![3.0], vec![1.0, 2.0], CostModel::sqt(array![[1.0, 1.0]]).unwrap()).unwrap();
        let r = oracle_solve(&pr, 11).unwrap();
        assert_eq!(r.x_star, array![[1.0, 2.0]]);
    }

    #[test]
    fn sqt_two_by_two_closed_form() {
        // 2t^2 + 4(1-t)^2 is stationary at 12t = 8.
        let pr = validate_problem(
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            CostModel::sqt(array![[1.0, 2.0], [2.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let r = oracle_solve(&pr, DEFAULT_GRID_POINTS).unwrap();
        assert_eq!(r.dof, 1);
        assert!((r.x_star[[0, 0]] - 2.0 / 3.0).abs() < 1e-14);
        assert!((r.objective_star - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn linear_two_by_two_picks_vertex() {
        let pr = validate_problem(
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            CostModel::l1(array![[1.0, 3.0], [3.0, 1.0]], 1e-6).unwrap(),
        )
        .unwrap();
        let r = linear_oracle(&pr).unwrap();
        assert_eq!(r.x_star, array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(r.objective_star, 2.0);
    }

    #[test]
    fn grid_agrees_with_closed_form_on_segment() {
        let pr = validate_problem(
            vec![0.7, 1.3],
            vec![1.1, 0.9],
            CostModel::l1(array![[1.0, 2.0], [1.5, 0.5]], 1e-2).unwrap(),
        )
        .unwrap();
        let coarse = oracle_solve(&pr, 21).unwrap();
        let fine = oracle_solve(&pr, DEFAULT_GRID_POINTS).unwrap();
        assert!((coarse.objective_star - fine.objective_star).abs() < 1e-9);
    }

    #[test]
    fn two_free_variables_stay_feasible() {
        let pr = validate_problem(
            vec![1.0, 2.0],
            vec![0.5, 1.5, 1.0],
            CostModel::sqt(array![[1.0, 2.0, 3.0], [2.0, 1.0, 2.0]]).unwrap(),
        )
        .unwrap();
        let r = oracle_solve(&pr, 201).unwrap();
        assert_eq!(r.dof, 2);
        let (row, col) = marginal_residuals(pr.p(), pr.q(), &r.x_star);
        assert!(row < 1e-12 && col < 1e-12);
        assert!(r.x_star.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_large_instances() {
        let pr = validate_problem(vec![1.0; 3], vec![1.0; 3], CostModel::sqt(Array2::ones((3, 3))).unwrap()).unwrap();
        assert_eq!(
            oracle_solve(&pr, 11).unwrap_err(),
            Error::TooManyDegreesOfFreedom { dof: 4 }
        );
        assert!(linear_oracle(&pr).is_err());
    }
}
