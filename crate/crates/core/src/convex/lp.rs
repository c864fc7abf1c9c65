use super::{SolveReport, Status, FEAS_TOL, KKT_TOL};
use crate::error::{invalid, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

/// One constraint row `Σ coeffs · x (kind) rhs` with sparse coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

/// Variable bounds; `None` means unbounded on that side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Bound {
    pub const NONNEG: Bound = Bound { lo: Some(0.0), hi: None };
    pub const FREE: Bound = Bound { lo: None, hi: None };

    pub fn between(lo: f64, hi: f64) -> Self {
        Self { lo: Some(lo), hi: Some(hi) }
    }

    pub fn at_least(lo: f64) -> Self {
        Self { lo: Some(lo), hi: None }
    }
}

/// A linear program over `n` variables. Serializes to the JSON debug format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub bounds: Vec<Bound>,
}

impl LinearProgram {
    /// `n` non-negative variables with zero objective and no rows.
    pub fn new(n: usize, sense: Sense) -> Self {
        Self { sense, objective: vec![0.0; n], rows: Vec::new(), bounds: vec![Bound::NONNEG; n] }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, kind, rhs });
        self.rows.len() - 1
    }

    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.add_row(coeffs, RowKind::Le, rhs)
    }

    pub fn add_ge(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.add_row(coeffs, RowKind::Ge, rhs)
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.add_row(coeffs, RowKind::Eq, rhs)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.bounds.len() != n {
            return Err(invalid("bounds length differs from the variable count"));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite objective coefficient"));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if !r.rhs.is_finite() {
                return Err(invalid(format!("row {i} has a non-finite right-hand side")));
            }
            if r.coeffs.iter().any(|&(j, a)| j >= n || !a.is_finite()) {
                return Err(invalid(format!("row {i} references a bad column or coefficient")));
            }
        }
        for (j, b) in self.bounds.iter().enumerate() {
            if let (Some(lo), Some(hi)) = (b.lo, b.hi) {
                if lo > hi {
                    return Err(invalid(format!("variable {j} has lo > hi")));
                }
            }
            if b.lo.is_some_and(|v| !v.is_finite()) || b.hi.is_some_and(|v| !v.is_finite()) {
                return Err(invalid(format!("variable {j} has a non-finite bound")));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in &self.rows {
            let lhs: f64 = r.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match r.kind {
                RowKind::Le => lhs - r.rhs,
                RowKind::Ge => r.rhs - lhs,
                RowKind::Eq => (lhs - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (b, v) in self.bounds.iter().zip(x) {
            if let Some(lo) = b.lo {
                worst = worst.max(lo - v);
            }
            if let Some(hi) = b.hi {
                worst = worst.max(v - hi);
            }
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let lp: Self = serde_json::from_str(s)?;
        lp.validate()?;
        Ok(lp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub feas_tol: f64,
    pub kkt_tol: f64,
    /// Pivot limit across both phases.
    pub iter_cap: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self { feas_tol: FEAS_TOL, kkt_tol: KKT_TOL, iter_cap: 50_000 }
    }
}

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const DEGENERATE_STREAK: usize = 50;

/// How an original variable maps onto non-negative standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = offset + col
    Shift { col: usize, offset: f64 },
    /// x = offset - col
    Mirror { col: usize, offset: f64 },
    /// x = plus - minus
    Split { plus: usize, minus: usize },
}

/// Standard form `max c·x' s.t. A x' (kind) b, x' ≥ 0, b ≥ 0`.
struct Standard {
    a: Vec<Vec<(usize, f64)>>,
    kinds: Vec<RowKind>,
    b: Vec<f64>,
    c: Vec<f64>,
    c_offset: f64,
    n_cols: usize,
    /// +1 or -1 per row; -1 when the row was negated to make `b ≥ 0`.
    row_sign: Vec<f64>,
    n_user_rows: usize,
    map: Vec<VarMap>,
}

fn standardize(lp: &LinearProgram) -> Standard {
    let sign = if lp.sense == Sense::Maximize { 1.0 } else { -1.0 };
    let mut map = Vec::with_capacity(lp.n_vars());
    let mut n_cols = 0;
    let mut upper_rows = Vec::new();
    for b in &lp.bounds {
        match (b.lo, b.hi) {
            (Some(lo), hi) => {
                map.push(VarMap::Shift { col: n_cols, offset: lo });
                if let Some(hi) = hi {
                    upper_rows.push((n_cols, hi - lo));
                }
                n_cols += 1;
            }
            (None, Some(hi)) => {
                map.push(VarMap::Mirror { col: n_cols, offset: hi });
                n_cols += 1;
            }
            (None, None) => {
                map.push(VarMap::Split { plus: n_cols, minus: n_cols + 1 });
                n_cols += 2;
            }
        }
    }

    let mut c = vec![0.0; n_cols];
    let mut c_offset = 0.0;
    for (j, &cj) in lp.objective.iter().enumerate() {
        let cj = sign * cj;
        match map[j] {
            VarMap::Shift { col, offset } => {
                c[col] += cj;
                c_offset += cj * offset;
            }
            VarMap::Mirror { col, offset } => {
                c[col] -= cj;
                c_offset += cj * offset;
            }
            VarMap::Split { plus, minus } => {
                c[plus] += cj;
                c[minus] -= cj;
            }
        }
    }

    let mut a = Vec::new();
    let mut kinds = Vec::new();
    let mut b = Vec::new();
    let mut row_sign = Vec::new();
    let mut push_row = |coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64| {
        if rhs < 0.0 {
            a.push(coeffs.into_iter().map(|(j, v)| (j, -v)).collect());
            kinds.push(match kind {
                RowKind::Le => RowKind::Ge,
                RowKind::Ge => RowKind::Le,
                RowKind::Eq => RowKind::Eq,
            });
            b.push(-rhs);
            row_sign.push(-1.0);
        } else {
            a.push(coeffs);
            kinds.push(kind);
            b.push(rhs);
            row_sign.push(1.0);
        }
    };
    for r in &lp.rows {
        let mut dense: Vec<(usize, f64)> = Vec::with_capacity(r.coeffs.len());
        let mut rhs = r.rhs;
        for &(j, v) in &r.coeffs {
            match map[j] {
                VarMap::Shift { col, offset } => {
                    dense.push((col, v));
                    rhs -= v * offset;
                }
                VarMap::Mirror { col, offset } => {
                    dense.push((col, -v));
                    rhs -= v * offset;
                }
                VarMap::Split { plus, minus } => {
                    dense.push((plus, v));
                    dense.push((minus, -v));
                }
            }
        }
        push_row(merge_duplicates(dense), r.kind, rhs);
    }
    for (col, width) in upper_rows {
        push_row(vec![(col, 1.0)], RowKind::Le, width);
    }
    Standard { a, kinds, b, c, c_offset, n_cols, row_sign, n_user_rows: lp.rows.len(), map }
}

fn merge_duplicates(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    v.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (j, a) in v {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => out.push((j, a)),
        }
    }
    out
}

/// Dense simplex tableau. Row `m` holds the reduced costs `d_j = c_B B⁻¹ A_j - c_j`
/// with the objective value in the last column.
struct Tableau {
    m: usize,
    width: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn rhs_col(&self) -> usize {
        self.width - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.t[r * w + c];
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for v in prow.iter_mut() {
            *v /= p;
        }
        prow[c] = 1.0;
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Loads reduced costs for column costs `cost`; `None` marks columns barred from entering.
    fn set_costs(&mut self, cost: &[Option<f64>]) {
        let w = self.width;
        let m = self.m;
        let obj = m * w;
        for j in 0..w {
            self.t[obj + j] = 0.0;
        }
        for (j, cj) in cost.iter().enumerate() {
            self.t[obj + j] = -cj.unwrap_or(0.0);
        }
        for i in 0..m {
            let cb = cost[self.basis[i]].unwrap_or(0.0);
            if cb != 0.0 {
                for j in 0..w {
                    self.t[obj + j] += cb * self.t[i * w + j];
                }
            }
        }
    }

    /// Runs simplex pivots until optimal. Returns `Err(status)` on
    /// unboundedness or when the pivot cap is reached.
    fn optimize(&mut self, allowed: &[bool], cap: usize) -> std::result::Result<(), Status> {
        let rhs = self.rhs_col();
        let obj = self.m * self.width;
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_STREAK;
            let mut enter = None;
            let mut best = -COST_TOL;
            for j in 0..rhs {
                if !allowed[j] {
                    continue;
                }
                let d = self.t[obj + j];
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = enter else { return Ok(()) };
            if self.pivots >= cap {
                return Err(Status::IterationCap);
            }

            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, c);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.at(i, rhs).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio, a)),
                    Some((li, lr, la)) => {
                        let tie = (ratio - lr).abs() <= 1e-12 * (1.0 + lr.abs());
                        let better = if tie {
                            if bland {
                                self.basis[i] < self.basis[li]
                            } else {
                                a > la
                            }
                        } else {
                            ratio < lr
                        };
                        if better {
                            Some((i, ratio, a))
                        } else {
                            Some((li, lr, la))
                        }
                    }
                };
            }
            let Some((r, ratio, _)) = leave else { return Err(Status::Unbounded) };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
        }
    }
}

/// Solves a linear program with a two-phase dense simplex method.
///
/// Entering columns follow Dantzig's rule with the lowest index on ties and
/// switch to Bland's rule after a run of degenerate pivots, which rules out
/// cycling. The reported solution is recomputed from the final basis by a
/// fresh factorization.
pub fn solve_lp(lp: &LinearProgram, opts: &LpOptions) -> Result<SolveReport> {
    lp.validate()?;
    let start = Instant::now();
    let st = standardize(lp);
    let m = st.a.len();

    // Columns: structural, then one slack/surplus per inequality row, then artificials.
    let mut slack_of_row = vec![None; m];
    let mut n = st.n_cols;
    for i in 0..m {
        if st.kinds[i] != RowKind::Eq {
            slack_of_row[i] = Some(n);
            n += 1;
        }
    }
    let mut art_of_row = vec![None; m];
    let first_art = n;
    for i in 0..m {
        if st.kinds[i] != RowKind::Le {
            art_of_row[i] = Some(n);
            n += 1;
        }
    }
    let width = n + 1;
    let mut tab = Tableau { m, width, t: vec![0.0; (m + 1) * width], basis: vec![0; m], pivots: 0 };
    for i in 0..m {
        for &(j, v) in &st.a[i] {
            tab.t[i * width + j] = v;
        }
        if let Some(s) = slack_of_row[i] {
            tab.t[i * width + s] = if st.kinds[i] == RowKind::Le { 1.0 } else { -1.0 };
        }
        if let Some(a) = art_of_row[i] {
            tab.t[i * width + a] = 1.0;
            tab.basis[i] = a;
        } else {
            tab.basis[i] = slack_of_row[i].expect("le row has a slack");
        }
        tab.t[i * width + n] = st.b[i];
    }

    let report = |status: Status, x: Vec<f64>, tab: &Tableau, duals: Vec<f64>, dual_obj: Option<f64>, kkt: f64| {
        let objective = if x.is_empty() { f64::NAN } else { lp.objective_value(&x) };
        let max_violation = if x.is_empty() { f64::INFINITY } else { lp.max_violation(&x) };
        SolveReport {
            status,
            objective,
            x,
            duals,
            dual_objective: dual_obj,
            max_violation,
            kkt_residual: kkt,
            iterations: tab.pivots,
            wall_time_s: start.elapsed().as_secs_f64(),
            objective_trace: Vec::new(),
        }
    };

    // Phase 1: maximize -Σ artificials.
    if first_art < n {
        let cost: Vec<Option<f64>> = (0..n).map(|j| Some(if j >= first_art { -1.0 } else { 0.0 })).collect();
        tab.set_costs(&cost);
        let allowed = vec![true; n];
        if let Err(status) = tab.optimize(&allowed, opts.iter_cap) {
            return Ok(report(status, Vec::new(), &tab, Vec::new(), None, f64::INFINITY));
        }
        let scale = 1.0 + st.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let infeasibility = -tab.at(m, n);
        if infeasibility > opts.feas_tol * scale {
            return Ok(report(Status::Infeasible, Vec::new(), &tab, Vec::new(), None, f64::INFINITY));
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..m {
            if tab.basis[i] >= first_art {
                let col = (0..first_art)
                    .filter(|&j| tab.at(i, j).abs() > PIVOT_TOL)
                    .max_by(|&a, &b| tab.at(i, a).abs().total_cmp(&tab.at(i, b).abs()));
                if let Some(j) = col {
                    tab.pivot(i, j);
                }
            }
        }
    }

    // Phase 2 on the original costs with artificials barred.
    let cost: Vec<Option<f64>> =
        (0..n).map(|j| if j < st.n_cols { Some(st.c[j]) } else if j < first_art { Some(0.0) } else { None }).collect();
    tab.set_costs(&cost);
    let allowed: Vec<bool> = (0..n).map(|j| j < first_art).collect();
    if let Err(status) = tab.optimize(&allowed, opts.iter_cap) {
        let x = extract(&st, &tab, n);
        return Ok(report(status, x, &tab, Vec::new(), None, f64::INFINITY));
    }

    // Clean primal and duals from a fresh factorization of the final basis.
    let mut amat = DMatrix::zeros(m, st.n_cols);
    for (i, row) in st.a.iter().enumerate() {
        for &(j, v) in row {
            amat[(i, j)] = v;
        }
    }
    let column = |j: usize| -> DVector<f64> {
        let mut v = DVector::zeros(m);
        if j < st.n_cols {
            v.copy_from(&amat.column(j));
        } else if let Some(i) = slack_of_row.iter().position(|s| *s == Some(j)) {
            v[i] = if st.kinds[i] == RowKind::Le { 1.0 } else { -1.0 };
        } else if let Some(i) = art_of_row.iter().position(|s| *s == Some(j)) {
            v[i] = 1.0;
        }
        v
    };
    let col_cost = |j: usize| if j < st.n_cols { st.c[j] } else { 0.0 };
    let mut bmat = DMatrix::zeros(m, m);
    for (k, &j) in tab.basis.iter().enumerate() {
        bmat.set_column(k, &column(j));
    }
    let lu = bmat.clone().lu();
    let b = DVector::from_column_slice(&st.b);
    let cb = DVector::from_iterator(m, tab.basis.iter().map(|&j| col_cost(j)));
    let (xb, y) = match (lu.solve(&b), bmat.transpose().lu().solve(&cb)) {
        (Some(xb), Some(y)) if m > 0 => (xb, y),
        _ => {
            let xb = DVector::from_iterator(m, (0..m).map(|i| tab.at(i, n)));
            let y = DVector::from_iterator(m, (0..m).map(|i| tab.at(m, slack_or_art(&slack_of_row, &art_of_row, i))));
            (xb, y)
        }
    };
    let mut xs = vec![0.0; n];
    for (k, &j) in tab.basis.iter().enumerate() {
        xs[j] = xb[k];
    }
    let x = map_back(&st, &xs);

    // Reduced costs c_j - yᵀA_j must be ≤ 0 for every allowed column.
    let mut dual_infeas: f64 = 0.0;
    for j in 0..first_art {
        let d = col_cost(j) - column(j).dot(&y);
        dual_infeas = dual_infeas.max(d);
    }
    let sign = if lp.sense == Sense::Maximize { 1.0 } else { -1.0 };
    let dual_std = y.dot(&b) + st.c_offset;
    let primal_std = sign * lp.objective_value(&x);
    let gap = (primal_std - dual_std).abs();
    let kkt = dual_infeas.max(gap / (1.0 + primal_std.abs()));
    let duals: Vec<f64> = (0..st.n_user_rows).map(|i| sign * st.row_sign[i] * y[i]).collect();

    let max_violation = lp.max_violation(&x);
    let status = if max_violation <= opts.feas_tol && kkt <= opts.kkt_tol { Status::Optimal } else { Status::Inaccurate };
    Ok(report(status, x, &tab, duals, Some(sign * dual_std), kkt))
}

fn slack_or_art(slack: &[Option<usize>], art: &[Option<usize>], i: usize) -> usize {
    slack[i].or(art[i]).expect("every row has a slack or an artificial")
}

fn extract(st: &Standard, tab: &Tableau, n: usize) -> Vec<f64> {
    let mut xs = vec![0.0; n];
    for (i, &j) in tab.basis.iter().enumerate() {
        xs[j] = tab.at(i, n);
    }
    map_back(st, &xs)
}

fn map_back(st: &Standard, xs: &[f64]) -> Vec<f64> {
    st.map
        .iter()
        .map(|m| match *m {
            VarMap::Shift { col, offset } => offset + xs[col],
            VarMap::Mirror { col, offset } => offset - xs[col],
            VarMap::Split { plus, minus } => xs[plus] - xs[minus],
        })
        .collect()
}
