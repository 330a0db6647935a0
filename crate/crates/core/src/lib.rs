//! Solver for the general transportation problem with half-quadratic route
//! costs.
//!
//! Shipping `x_ij` units from supplier `i` to destination `j` costs
//! `f_ij(x_ij)`; the plan must exactly use every supply `p_i` and meet every
//! demand `q_j`. When each `f_ij` is half-quadratic (see [`potentials`]) the
//! problem is solved as a sequence of weighted quadratic transportation
//! problems, each handled by a projected Gauss-Seidel iteration on the duals
//! that needs no storage beyond the plan and the weights.
//!
//! ```
//! use hqtp_core::{validate_problem, solve_hqtp, CostModel, SolverOptions};
//! use ndarray::array;
//!
//! let cost = CostModel::l1(array![[1.0, 3.0], [3.0, 1.0]], 1e-6).unwrap();
//! let problem = validate_problem(vec![1.0, 1.0], vec![1.0, 1.0], cost).unwrap();
//! let sol = solve_hqtp(&problem, &SolverOptions::default()).unwrap();
//! assert!((sol.x[[0, 0]] - 1.0).abs() < 1e-3);
//! ```

pub mod error;
pub mod genbench;
pub mod io;
pub mod model;
pub mod oracle;
pub mod potentials;
pub mod solver;

pub use error::{Error, Result};
pub use model::{kkt_residuals, objective, validate_problem, KktResiduals, Problem, Solution};
pub use potentials::{CostKind, CostModel, GridSpec, Majorizer, PotentialReport};
pub use solver::{
    dual_sweep, recover_primal, solve_hqtp, solve_qtp, ConvergenceTrace, DualState, InnerSchedule,
    MemoryMode, SolverOptions, TraceRecord,
};
