use super::{SolveReport, Status, FEAS_TOL, ITER_CAP, KKT_TOL};
use crate::error::{invalid, Error, Result};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

/// A twice-differentiable convex function of the full variable vector.
pub trait SmoothFn: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    /// Appends the non-zero partial derivatives as `(index, value)` pairs.
    fn gradient(&self, x: &[f64], out: &mut Vec<(usize, f64)>);
    /// Adds `scale · ∇²f(x)` to `h`.
    fn add_hessian(&self, x: &[f64], scale: f64, h: &mut DMatrix<f64>);
}

/// `Σ coeffs · x + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFn {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl SmoothFn for AffineFn {
    fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }
    fn gradient(&self, _x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.extend_from_slice(&self.coeffs);
    }
    fn add_hessian(&self, _x: &[f64], _scale: f64, _h: &mut DMatrix<f64>) {}
}

/// `weight · ‖x_S − center‖² + constant` over the index set `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFn {
    pub indices: Vec<usize>,
    pub center: Vec<f64>,
    pub weight: f64,
    pub constant: f64,
}

impl SmoothFn for QuadraticFn {
    fn value(&self, x: &[f64]) -> f64 {
        self.constant
            + self.weight * self.indices.iter().zip(&self.center).map(|(&j, c)| (x[j] - c).powi(2)).sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        for (&j, c) in self.indices.iter().zip(&self.center) {
            out.push((j, 2.0 * self.weight * (x[j] - c)));
        }
    }
    fn add_hessian(&self, _x: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        for &j in &self.indices {
            h[(j, j)] += 2.0 * self.weight * scale;
        }
    }
}

/// Per-variable bounds; infinite entries mean unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn unbounded(n: usize) -> Self {
        Self { lo: vec![f64::NEG_INFINITY; n], hi: vec![f64::INFINITY; n] }
    }
}

/// `minimize f0(x)` subject to `f_i(x) ≤ 0`, `lo ≤ x ≤ hi` and `A x = b`.
pub struct SmoothConvexProgram {
    pub n: usize,
    pub objective: Box<dyn SmoothFn>,
    pub constraints: Vec<Box<dyn SmoothFn>>,
    pub bounds: BoxBounds,
    pub equalities: Vec<(Vec<(usize, f64)>, f64)>,
    /// Feasible starting point, typically the expansion point of a surrogate.
    pub start: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothOptions {
    pub feas_tol: f64,
    pub kkt_tol: f64,
    /// Cap on Newton steps across all barrier stages.
    pub iter_cap: usize,
    /// Barrier parameter growth per stage.
    pub mu: f64,
    /// Target duality gap relative to `1 + |f0|`.
    pub gap_tol: f64,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        Self { feas_tol: FEAS_TOL, kkt_tol: KKT_TOL, iter_cap: ITER_CAP, mu: 20.0, gap_tol: 1e-9 }
    }
}

/// Borrowed view of the problem the barrier method operates on.
struct Problem<'a> {
    n: usize,
    objective: &'a dyn SmoothFn,
    constraints: Vec<&'a dyn SmoothFn>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    eq: Vec<(Vec<(usize, f64)>, f64)>,
}

impl Problem<'_> {
    fn strictly_feasible(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| v > l && v < h)
            && self.constraints.iter().all(|c| c.value(x) < 0.0)
    }

    fn n_barrier_terms(&self) -> usize {
        self.constraints.len()
            + self.lo.iter().filter(|v| v.is_finite()).count()
            + self.hi.iter().filter(|v| v.is_finite()).count()
    }

    /// Barrier function `t f0 − Σ log(−f_i) − Σ log` of box slacks; `None` outside the domain.
    fn barrier(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut v = t * self.objective.value(x);
        for c in &self.constraints {
            let f = c.value(x);
            if !(f < 0.0) {
                return None;
            }
            v -= (-f).ln();
        }
        for j in 0..self.n {
            if self.lo[j].is_finite() {
                let s = x[j] - self.lo[j];
                if !(s > 0.0) {
                    return None;
                }
                v -= s.ln();
            }
            if self.hi[j].is_finite() {
                let s = self.hi[j] - x[j];
                if !(s > 0.0) {
                    return None;
                }
                v -= s.ln();
            }
        }
        Some(v)
    }

    fn barrier_derivatives(&self, x: &[f64], t: f64, buf: &mut Vec<(usize, f64)>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        buf.clear();
        self.objective.gradient(x, buf);
        for &(j, v) in buf.iter() {
            g[j] += t * v;
        }
        self.objective.add_hessian(x, t, &mut h);
        for c in &self.constraints {
            let f = c.value(x);
            let inv = 1.0 / (-f);
            buf.clear();
            c.gradient(x, buf);
            for &(j, v) in buf.iter() {
                g[j] += inv * v;
            }
            for &(i, vi) in buf.iter() {
                let s = inv * inv * vi;
                for &(j, vj) in buf.iter() {
                    h[(i, j)] += s * vj;
                }
            }
            c.add_hessian(x, inv, &mut h);
        }
        for j in 0..n {
            if self.lo[j].is_finite() {
                let s = x[j] - self.lo[j];
                g[j] -= 1.0 / s;
                h[(j, j)] += 1.0 / (s * s);
            }
            if self.hi[j].is_finite() {
                let s = self.hi[j] - x[j];
                g[j] += 1.0 / s;
                h[(j, j)] += 1.0 / (s * s);
            }
        }
        (g, h)
    }

    /// Newton direction for the barrier, respecting the equality rows.
    fn newton_step(&self, g: &DVector<f64>, mut h: DMatrix<f64>) -> Option<DVector<f64>> {
        let n = self.n;
        if self.eq.is_empty() {
            let scale = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
            let mut ridge = 0.0;
            for _ in 0..12 {
                let mut hr = h.clone();
                for i in 0..n {
                    hr[(i, i)] += ridge;
                }
                if let Some(ch) = hr.cholesky() {
                    return Some(ch.solve(&(-g)));
                }
                ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
            }
            return None;
        }
        let p = self.eq.len();
        let mut kkt = DMatrix::zeros(n + p, n + p);
        for i in 0..n {
            h[(i, i)] += 1e-14 * h[(i, i)].abs();
        }
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        for (r, (coeffs, _)) in self.eq.iter().enumerate() {
            for &(j, a) in coeffs {
                kkt[(n + r, j)] += a;
                kkt[(j, n + r)] += a;
            }
        }
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&(-g));
        kkt.lu().solve(&rhs).map(|s| s.rows(0, n).into_owned())
    }

    /// Centers the barrier at parameter `t` from a strictly feasible point.
    /// Returns the number of Newton steps taken.
    fn center(&self, x: &mut Vec<f64>, t: f64, budget: usize, stop: &dyn Fn(&[f64]) -> bool) -> usize {
        let mut buf = Vec::new();
        let mut steps = 0;
        while steps < budget {
            if stop(x) {
                break;
            }
            let (g, h) = self.barrier_derivatives(x, t, &mut buf);
            let Some(dx) = self.newton_step(&g, h) else { break };
            let decrement = -g.dot(&dx);
            steps += 1;
            // Half the squared decrement over `t` bounds the objective error
            // left by stopping here; below round-off there is nothing to gain.
            let tol = (2e-10f64).max(2e-13 * t * (1.0 + self.objective.value(x).abs()));
            if !(decrement > tol) {
                break;
            }
            let phi0 = self.barrier(x, t).expect("iterate stays strictly feasible");
            let mut s = 1.0;
            let mut trial = x.clone();
            let accepted = loop {
                for j in 0..self.n {
                    trial[j] = x[j] + s * dx[j];
                }
                if let Some(phi) = self.barrier(&trial, t) {
                    if phi <= phi0 - 0.25 * s * decrement {
                        break true;
                    }
                }
                s *= 0.5;
                if s < 1e-16 {
                    break false;
                }
            };
            if !accepted {
                break;
            }
            std::mem::swap(x, &mut trial);
        }
        steps
    }

    /// Stationarity and complementarity of `x` with multipliers from the barrier at `t`.
    fn kkt_residual(&self, x: &[f64], t: f64) -> f64 {
        let n = self.n;
        let mut buf = Vec::new();
        let mut grad0 = DVector::zeros(n);
        self.objective.gradient(x, &mut buf);
        for &(j, v) in &buf {
            grad0[j] += v;
        }
        let mut r = grad0.clone();
        let mut compl: f64 = 0.0;
        for c in &self.constraints {
            let f = c.value(x);
            let lam = 1.0 / (t * (-f).max(1e-300));
            compl = compl.max(lam * f.abs());
            buf.clear();
            c.gradient(x, &mut buf);
            for &(j, v) in &buf {
                r[j] += lam * v;
            }
        }
        for j in 0..n {
            if self.lo[j].is_finite() {
                let s = x[j] - self.lo[j];
                r[j] -= 1.0 / (t * s);
                compl = compl.max(1.0 / t);
            }
            if self.hi[j].is_finite() {
                let s = self.hi[j] - x[j];
                r[j] += 1.0 / (t * s);
                compl = compl.max(1.0 / t);
            }
        }
        let r = project_out_equalities(&self.eq, n, r);
        let scale = 1.0 + grad0.amax();
        (r.amax() / scale).max(compl)
    }
}

/// Removes the component of `r` in the span of the equality normals.
fn project_out_equalities(eq: &[(Vec<(usize, f64)>, f64)], n: usize, r: DVector<f64>) -> DVector<f64> {
    if eq.is_empty() {
        return r;
    }
    let mut a = DMatrix::zeros(n, eq.len());
    for (k, (coeffs, _)) in eq.iter().enumerate() {
        for &(j, v) in coeffs {
            a[(j, k)] += v;
        }
    }
    let svd = a.clone().svd(true, true);
    match svd.solve(&r, 1e-12) {
        Ok(nu) => r - a * nu,
        Err(_) => r,
    }
}

/// KKT check at a given point with active-set multipliers from least squares.
fn kkt_at_point(prob: &Problem, x: &[f64], active_tol: f64) -> f64 {
    let n = prob.n;
    let mut buf = Vec::new();
    let mut grad0 = DVector::zeros(n);
    prob.objective.gradient(x, &mut buf);
    for &(j, v) in &buf {
        grad0[j] += v;
    }
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for c in &prob.constraints {
        if c.value(x) >= -active_tol {
            buf.clear();
            c.gradient(x, &mut buf);
            let mut col = DVector::zeros(n);
            for &(j, v) in &buf {
                col[j] += v;
            }
            cols.push(col);
        }
    }
    for j in 0..n {
        if x[j] - prob.lo[j] <= active_tol {
            let mut col = DVector::zeros(n);
            col[j] = -1.0;
            cols.push(col);
        }
        if prob.hi[j] - x[j] <= active_tol {
            let mut col = DVector::zeros(n);
            col[j] = 1.0;
            cols.push(col);
        }
    }
    let scale = 1.0 + grad0.amax();
    let mut r = grad0.clone();
    let mut negative_mult: f64 = 0.0;
    if !cols.is_empty() {
        let g = DMatrix::from_columns(&cols);
        let svd = g.clone().svd(true, true);
        if let Ok(lam) = svd.solve(&(-&grad0), 1e-12) {
            negative_mult = lam.iter().fold(0.0f64, |a, v| a.max(-v));
            r += g * lam;
        }
    }
    let r = project_out_equalities(&prob.eq, n, r);
    (r.amax() / scale).max(negative_mult / scale)
}

/// Phase-I constraint `f(x) − s ≤ 0`, with `s` stored after the original variables.
struct Shifted<'a> {
    inner: &'a dyn SmoothFn,
    s: usize,
}

impl SmoothFn for Shifted<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x) - x[self.s]
    }
    fn gradient(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        self.inner.gradient(x, out);
        out.push((self.s, -1.0));
    }
    fn add_hessian(&self, x: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        self.inner.add_hessian(x, scale, h);
    }
}

/// Finds a strictly feasible point by minimizing the largest violation.
fn phase_one(prob: &Problem, x0: &[f64], budget: usize) -> (Option<Vec<f64>>, usize) {
    let n = prob.n;
    let mut box_rows: Vec<AffineFn> = Vec::new();
    for j in 0..n {
        if prob.lo[j].is_finite() {
            box_rows.push(AffineFn { coeffs: vec![(j, -1.0)], constant: prob.lo[j] });
        }
        if prob.hi[j].is_finite() {
            box_rows.push(AffineFn { coeffs: vec![(j, 1.0)], constant: -prob.hi[j] });
        }
    }
    let mut worst: f64 = 0.0;
    for c in &prob.constraints {
        worst = worst.max(c.value(x0));
    }
    for b in &box_rows {
        worst = worst.max(b.value(x0));
    }
    let objective = AffineFn { coeffs: vec![(n, 1.0)], constant: 0.0 };
    let mut constraints: Vec<Shifted> = prob.constraints.iter().map(|c| Shifted { inner: *c, s: n }).collect();
    constraints.extend(box_rows.iter().map(|b| Shifted { inner: b as &dyn SmoothFn, s: n }));
    // Variables that only appear in constraints (an epigraph variable, say)
    // would let the auxiliary barrier run off to infinity; a wide ball around
    // the start keeps it bounded.
    let radius = 10.0 * (1.0 + x0.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    let ball = QuadraticFn { indices: (0..n).collect(), center: x0.to_vec(), weight: 1.0, constant: -radius * radius };
    let s_floor = -(1.0 + worst);
    let mut lo = vec![f64::NEG_INFINITY; n + 1];
    let mut hi = vec![f64::INFINITY; n + 1];
    lo[n] = s_floor;
    hi[n] = 2.0 * (1.0 + worst);
    let aux = Problem {
        n: n + 1,
        objective: &objective,
        constraints: constraints.iter().map(|c| c as &dyn SmoothFn).chain(std::iter::once(&ball as &dyn SmoothFn)).collect(),
        lo,
        hi,
        eq: prob.eq.clone(),
    };
    let mut x: Vec<f64> = x0.to_vec();
    x.push(1.0 + worst);
    let done = |x: &[f64]| prob.strictly_feasible(&x[..n]);
    let mut t = 1.0;
    let mut steps = 0;
    while steps < budget {
        steps += aux.center(&mut x, t, budget - steps, &done);
        if done(&x) {
            x.truncate(n);
            return (Some(x), steps);
        }
        if t > 1e12 {
            break;
        }
        t *= 20.0;
    }
    (None, steps)
}

/// Minimizes a smooth convex program with a log-barrier Newton method.
///
/// The start must be feasible. When it already satisfies the KKT
/// conditions it is returned without iterating. The returned point is never
/// worse than the start in objective value.
pub fn solve_smooth(prog: &SmoothConvexProgram, opts: &SmoothOptions) -> Result<SolveReport> {
    let clock = Instant::now();
    let n = prog.n;
    if prog.start.len() != n || prog.bounds.lo.len() != n || prog.bounds.hi.len() != n {
        return Err(invalid("program dimensions are inconsistent"));
    }

    // Variables with coinciding bounds are pinned by equality rows instead.
    let mut lo = prog.bounds.lo.clone();
    let mut hi = prog.bounds.hi.clone();
    let mut eq = prog.equalities.clone();
    for j in 0..n {
        if lo[j] == hi[j] {
            eq.push((vec![(j, 1.0)], lo[j]));
            lo[j] = f64::NEG_INFINITY;
            hi[j] = f64::INFINITY;
        }
    }
    let prob = Problem {
        n,
        objective: prog.objective.as_ref(),
        constraints: prog.constraints.iter().map(|c| c.as_ref()).collect(),
        lo,
        hi,
        eq,
    };

    let start = prog.start.clone();
    let violation = |x: &[f64]| -> f64 {
        let mut v: f64 = 0.0;
        for c in &prob.constraints {
            v = v.max(c.value(x));
        }
        for j in 0..n {
            v = v.max(prob.lo[j] - x[j]).max(x[j] - prob.hi[j]);
        }
        for (coeffs, b) in &prob.eq {
            let lhs: f64 = coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            v = v.max((lhs - b).abs());
        }
        v
    };
    let start_violation = violation(&start);
    if start_violation > opts.feas_tol {
        return Err(Error::Infeasible(format!("start point violates constraints by {start_violation:e}")));
    }
    let f_start = prob.objective.value(&start);
    let report = |status, x: Vec<f64>, kkt, iterations, trace: Vec<f64>| SolveReport {
        status,
        objective: prob.objective.value(&x),
        max_violation: violation(&x),
        x,
        duals: Vec::new(),
        dual_objective: None,
        kkt_residual: kkt,
        iterations,
        wall_time_s: clock.elapsed().as_secs_f64(),
        objective_trace: trace,
    };

    let kkt_start = kkt_at_point(&prob, &start, 1e-9);
    if kkt_start <= opts.kkt_tol {
        return Ok(report(Status::Optimal, start, kkt_start, 0, vec![f_start]));
    }

    let mut iterations = 0;
    let mut x = if prob.strictly_feasible(&start) {
        start.clone()
    } else {
        let (found, steps) = phase_one(&prob, &start, opts.iter_cap);
        iterations += steps;
        match found {
            Some(x) => x,
            // Empty interior: the start is the only point we can certify.
            None => return Ok(report(Status::Inaccurate, start, kkt_start, iterations, vec![f_start])),
        }
    };

    let m = prob.n_barrier_terms().max(1) as f64;
    let mut t = (m / (1.0 + f_start.abs())).max(1e-3);
    let mut trace = vec![f_start];
    let mut best = f_start;
    let never = |_: &[f64]| false;
    let mut capped = false;
    loop {
        let budget = opts.iter_cap.saturating_sub(iterations);
        if budget == 0 {
            capped = true;
            break;
        }
        iterations += prob.center(&mut x, t, budget, &never);
        let f = prob.objective.value(&x);
        best = best.min(f);
        trace.push(best);
        if m / t <= opts.gap_tol * (1.0 + f.abs()) {
            break;
        }
        t *= opts.mu;
    }

    // Barrier multipliers are poor estimates for constraints that are nearly
    // but not exactly active, so the active-set certificate may be sharper.
    let kkt = prob.kkt_residual(&x, t).min(kkt_at_point(&prob, &x, 1e-8));
    if prob.objective.value(&x) > f_start {
        // The barrier bound certifies the start within the final gap.
        let status = if capped { Status::IterationCap } else { Status::Optimal };
        return Ok(report(status, start, kkt_start.min(kkt), iterations, trace));
    }
    let status = if capped {
        Status::IterationCap
    } else if kkt <= opts.kkt_tol && violation(&x) <= opts.feas_tol {
        Status::Optimal
    } else {
        Status::Inaccurate
    };
    Ok(report(status, x, kkt, iterations, trace))
}
