//! Solvers for the convex subproblems: a dense two-phase simplex method for
//! linear programs and a log-barrier Newton method for smooth convex
//! programs. Both return a [`SolveReport`].

mod lp;
mod smooth;

pub use lp::{solve_lp, Bound, LinearProgram, LpOptions, Row, RowKind, Sense};
pub use smooth::{
    solve_smooth, AffineFn, BoxBounds, QuadraticFn, SmoothConvexProgram, SmoothFn, SmoothOptions,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationCap,
    /// Terminated but the final point misses the feasibility or optimality
    /// tolerance.
    Inaccurate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: Status,
    /// Objective in the sense of the problem (maximized or minimized).
    pub objective: f64,
    pub x: Vec<f64>,
    /// Dual value per constraint row, when available.
    pub duals: Vec<f64>,
    pub dual_objective: Option<f64>,
    pub max_violation: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    /// Objective after each outer iteration (smooth solver only).
    pub objective_trace: Vec<f64>,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

pub const FEAS_TOL: f64 = 1e-7;
pub const KKT_TOL: f64 = 1e-5;
pub const ITER_CAP: usize = 500;
