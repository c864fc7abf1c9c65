//! Pre-flight design of the 3D trajectory and the sensor schedule.
//!
//! Block coordinate descent alternates three convex steps: the scheduling LP
//! for fixed waypoints, a horizontal step that maximizes a concave lower
//! bound of every expected LoS rate around the current waypoints, and the
//! analogous vertical step. A block is kept only if the true max-min rate
//! does not drop, so the objective is monotone.

use crate::channel::{expected_rate_lb, surrogate_at, ChannelParams, SurrogateCoeffs};
use crate::convex::{
    solve_lp, solve_smooth, AffineFn, BoxBounds, LinearProgram, LpOptions, Sense, SmoothConvexProgram, SmoothFn,
    SmoothOptions, SolveReport, Status,
};
use crate::error::{invalid, Error, Result};
use crate::geom::Point2;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Mission geometry, kinematics and time discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    /// Flight duration, s.
    pub t0: f64,
    /// Slot length, s.
    pub delta: f64,
    pub n_slots: usize,
    pub q_start: Point2,
    pub q_end: Point2,
    pub z_start: f64,
    pub z_end: f64,
    pub v_xy_max: f64,
    pub v_z_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Largest admissible distance change within a slot relative to `h_min`.
    pub eps_max: f64,
    /// Stop once the max-min rate improves by less than this per iteration.
    pub eps_bcd: f64,
}

/// Slot count `ceil(T0 · max(V_xy, V_z) / (H_min · eps_max))`, at least 1.
pub fn choose_slot_count(t0: f64, v_xy_max: f64, v_z_max: f64, h_min: f64, eps_max: f64) -> Result<usize> {
    if !(t0 > 0.0 && v_xy_max >= 0.0 && v_z_max >= 0.0 && h_min > 0.0 && eps_max > 0.0) {
        return Err(invalid("slot count needs T0, H_min, eps_max > 0 and non-negative speeds"));
    }
    let x = t0 * v_xy_max.max(v_z_max) / (h_min * eps_max);
    // Guard against ratios such as 53.000000000000007 from decimal inputs.
    let n = (x - 1e-9 * x).ceil();
    Ok((n as usize).max(1))
}

impl MissionConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        t0: f64,
        q_start: Point2,
        z_start: f64,
        q_end: Point2,
        z_end: f64,
        v_xy_max: f64,
        v_z_max: f64,
        h_min: f64,
        h_max: f64,
        eps_max: f64,
        eps_bcd: f64,
    ) -> Result<Self> {
        let n_slots = choose_slot_count(t0, v_xy_max, v_z_max, h_min, eps_max)?;
        let cfg = Self {
            t0,
            delta: t0 / n_slots as f64,
            n_slots,
            q_start,
            q_end,
            z_start,
            z_end,
            v_xy_max,
            v_z_max,
            h_min,
            h_max,
            eps_max,
            eps_bcd,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flight from (0,150,50) to (300,150,50) m at 40/20 m/s within
    /// altitudes [50, 300] m, with `eps_max` chosen so that slots last 0.2 s.
    pub fn preset(t0: f64) -> Result<Self> {
        let (v_xy, h_min, delta) = (40.0, 50.0, 0.2);
        Self::new(
            t0,
            Point2::new(0.0, 150.0),
            h_min,
            Point2::new(300.0, 150.0),
            h_min,
            v_xy,
            20.0,
            h_min,
            300.0,
            v_xy * delta / h_min,
            1e-3,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_slots == 0 || (self.n_slots as f64 * self.delta - self.t0).abs() > 1e-9 * self.t0.max(1.0) {
            return Err(invalid("N · delta must equal T0"));
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_max) {
            return Err(invalid("altitude bounds must satisfy 0 < H_min <= H_max"));
        }
        for z in [self.z_start, self.z_end] {
            if z < self.h_min || z > self.h_max {
                return Err(invalid(format!("endpoint altitude {z} outside [H_min, H_max]")));
            }
        }
        if !(self.v_xy_max >= 0.0 && self.v_z_max >= 0.0 && self.eps_bcd > 0.0) {
            return Err(invalid("speeds must be non-negative and eps_bcd positive"));
        }
        let n = self.n_slots as f64;
        let tol = 1e-9;
        if self.q_start.dist(self.q_end) > n * self.s_xy() * (1.0 + tol) + tol
            || (self.z_start - self.z_end).abs() > n * self.s_z() * (1.0 + tol) + tol
        {
            return Err(Error::Infeasible("straight flight between the endpoints exceeds the speed limits".into()));
        }
        Ok(())
    }

    /// Horizontal distance cap per slot, m.
    pub fn s_xy(&self) -> f64 {
        self.v_xy_max * self.delta
    }

    /// Vertical distance cap per slot, m.
    pub fn s_z(&self) -> f64 {
        self.v_z_max * self.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub q: Point2,
    pub z: f64,
}

/// `N + 1` waypoints; slot `n` is flown from waypoint `n` to `n + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    pub fn n_slots(&self) -> usize {
        self.waypoints.len().saturating_sub(1)
    }

    pub fn horizontal(&self) -> Vec<Point2> {
        self.waypoints.iter().map(|w| w.q).collect()
    }

    pub fn altitudes(&self) -> Vec<f64> {
        self.waypoints.iter().map(|w| w.z).collect()
    }

    /// Checks endpoints, per-slot speed caps and altitude bounds to `tol` meters.
    pub fn validate(&self, cfg: &MissionConfig, tol: f64) -> Result<()> {
        let w = &self.waypoints;
        if w.len() != cfg.n_slots + 1 {
            return Err(Error::InvariantViolation(format!("{} waypoints for {} slots", w.len(), cfg.n_slots)));
        }
        let first = w[0];
        let last = w[w.len() - 1];
        if first.q.dist(cfg.q_start) > tol || (first.z - cfg.z_start).abs() > tol {
            return Err(Error::InvariantViolation("first waypoint differs from the start".into()));
        }
        if last.q.dist(cfg.q_end) > tol || (last.z - cfg.z_end).abs() > tol {
            return Err(Error::InvariantViolation("last waypoint differs from the end".into()));
        }
        for (n, p) in w.windows(2).enumerate() {
            let h = p[0].q.dist(p[1].q);
            let v = (p[0].z - p[1].z).abs();
            if h > cfg.s_xy() + tol || v > cfg.s_z() + tol {
                return Err(Error::InvariantViolation(format!("slot {n} exceeds a speed cap ({h} m, {v} m)")));
            }
        }
        for (n, p) in w.iter().enumerate() {
            if p.z < cfg.h_min - tol || p.z > cfg.h_max + tol {
                return Err(Error::InvariantViolation(format!("waypoint {n} altitude {} out of bounds", p.z)));
            }
        }
        Ok(())
    }
}

/// Straight flight from start to end at constant velocity.
pub fn init_trajectory(cfg: &MissionConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let n = cfg.n_slots;
    let waypoints = (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            Waypoint { q: cfg.q_start.lerp(cfg.q_end, s), z: cfg.z_start + s * (cfg.z_end - cfg.z_start) }
        })
        .collect();
    let traj = Trajectory { waypoints };
    traj.validate(cfg, 1e-6)?;
    Ok(traj)
}

/// Shortest visiting order start → sensors → end: exhaustive for up to
/// eight sensors, nearest neighbor beyond.
fn tour_order(cfg: &MissionConfig, sensors: &[Point2]) -> Vec<usize> {
    let length = |order: &[usize]| -> f64 {
        let mut at = cfg.q_start;
        let mut total = 0.0;
        for &k in order {
            total += at.dist(sensors[k]);
            at = sensors[k];
        }
        total + at.dist(cfg.q_end)
    };
    let k = sensors.len();
    if k > 8 {
        let mut left: Vec<usize> = (0..k).collect();
        let mut at = cfg.q_start;
        let mut order = Vec::with_capacity(k);
        while !left.is_empty() {
            let i = (0..left.len()).min_by(|&a, &b| at.dist(sensors[left[a]]).total_cmp(&at.dist(sensors[left[b]]))).unwrap();
            let s = left.remove(i);
            at = sensors[s];
            order.push(s);
        }
        return order;
    }
    // Heap's algorithm over all orders.
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (length(&perm), perm.clone());
    let mut c = vec![0; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 { perm.swap(0, i) } else { perm.swap(c[i], i) }
            let l = length(&perm);
            if l < best.0 {
                best = (l, perm.clone());
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best.1
}

/// Flight along the shortest tour over the sensors at full horizontal
/// speed, hovering above each sensor for an equal share of the spare time.
/// The altitude moves linearly from start to end. `None` when the tour is
/// longer than the mission allows.
pub fn tour_trajectory(cfg: &MissionConfig, sensors: &[Point2]) -> Result<Option<Trajectory>> {
    cfg.validate()?;
    let order = tour_order(cfg, sensors);
    let mut stops = vec![cfg.q_start];
    stops.extend(order.iter().map(|&k| sensors[k]));
    stops.push(cfg.q_end);
    let travel: f64 = stops.windows(2).map(|p| p[0].dist(p[1])).sum::<f64>() / cfg.v_xy_max;
    let spare = cfg.t0 - travel;
    if !(cfg.v_xy_max > 0.0) || spare < 0.0 {
        return Ok(None);
    }
    let hover = if sensors.is_empty() { 0.0 } else { spare / sensors.len() as f64 };
    // Position at time t along legs and hovers.
    let position = |mut t: f64| -> Point2 {
        for (i, leg) in stops.windows(2).enumerate() {
            if i > 0 {
                if t <= hover {
                    return leg[0];
                }
                t -= hover;
            }
            let dur = leg[0].dist(leg[1]) / cfg.v_xy_max;
            if t <= dur {
                return if dur > 0.0 { leg[0].lerp(leg[1], t / dur) } else { leg[0] };
            }
            t -= dur;
        }
        cfg.q_end
    };
    let n = cfg.n_slots;
    let mut waypoints: Vec<Waypoint> = (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            Waypoint { q: position(s * cfg.t0), z: cfg.z_start + s * (cfg.z_end - cfg.z_start) }
        })
        .collect();
    waypoints[0].q = cfg.q_start;
    waypoints[n].q = cfg.q_end;
    let traj = Trajectory { waypoints };
    Ok(traj.validate(cfg, 1e-6).is_ok().then_some(traj))
}

/// `K × N` fraction of each slot given to each sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub a: Vec<Vec<f64>>,
}

impl Schedule {
    pub fn n_sensors(&self) -> usize {
        self.a.len()
    }

    pub fn n_slots(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }

    pub fn is_binary(&self) -> bool {
        self.a.iter().flatten().all(|v| *v == 0.0 || *v == 1.0)
    }

    /// Largest column sum minus one (positive means over-allocated).
    pub fn max_column_excess(&self) -> f64 {
        (0..self.n_slots()).map(|n| self.a.iter().map(|r| r[n]).sum::<f64>() - 1.0).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Expected LoS-rate lower bound of every sensor at the first `N` waypoints.
pub fn rate_matrix(traj: &Trajectory, sensors: &[Point2], params: &ChannelParams) -> Vec<Vec<f64>> {
    let n = traj.n_slots();
    sensors
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let g = params.gamma(k);
            traj.waypoints[..n].iter().map(|p| expected_rate_lb(p.q, p.z, *w, g, params)).collect()
        })
        .collect()
}

/// Per-sensor average rate `(1/N) Σ_n a_kn r_kn`.
pub fn average_rates(schedule: &Schedule, rates: &[Vec<f64>]) -> Vec<f64> {
    schedule
        .a
        .iter()
        .zip(rates)
        .map(|(a, r)| a.iter().zip(r).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64)
        .collect()
}

/// Max-min average rate of a schedule on a trajectory.
pub fn min_rate(traj: &Trajectory, schedule: &Schedule, sensors: &[Point2], params: &ChannelParams) -> f64 {
    average_rates(schedule, &rate_matrix(traj, sensors, params)).into_iter().fold(f64::INFINITY, f64::min)
}

fn check_inputs(sensors: &[Point2], params: &ChannelParams) -> Result<()> {
    params.validate()?;
    if sensors.is_empty() || sensors.len() != params.sensor_count() {
        return Err(invalid(format!(
            "{} sensor positions for {} transmit powers",
            sensors.len(),
            params.sensor_count()
        )));
    }
    Ok(())
}

/// Max-min scheduling LP for a given `K × N` rate matrix.
pub fn scheduling_lp(rates: &[Vec<f64>]) -> LinearProgram {
    let k = rates.len();
    let n = rates.first().map_or(0, Vec::len);
    let eta = k * n;
    let mut lp = LinearProgram::new(k * n + 1, Sense::Maximize);
    lp.objective[eta] = 1.0;
    for (s, row) in rates.iter().enumerate() {
        let mut coeffs: Vec<(usize, f64)> =
            row.iter().enumerate().filter(|(_, r)| **r != 0.0).map(|(m, r)| (s * n + m, -r / n as f64)).collect();
        coeffs.push((eta, 1.0));
        lp.add_le(coeffs, 0.0);
    }
    // Column sums ≤ 1 also cap every entry at 1.
    for m in 0..n {
        lp.add_le((0..k).map(|s| (s * n + m, 1.0)).collect(), 1.0);
    }
    lp
}

/// Solves the scheduling LP on a trajectory; returns the fractional schedule and its max-min rate.
pub fn optimize_scheduling(traj: &Trajectory, sensors: &[Point2], params: &ChannelParams) -> Result<(Schedule, f64)> {
    check_inputs(sensors, params)?;
    schedule_for_rates(&rate_matrix(traj, sensors, params))
}

pub fn schedule_for_rates(rates: &[Vec<f64>]) -> Result<(Schedule, f64)> {
    let k = rates.len();
    let n = rates.first().map_or(0, Vec::len);
    let lp = scheduling_lp(rates);
    let rep = solve_lp(&lp, &LpOptions::default())?;
    if rep.status != Status::Optimal {
        return Err(Error::NotConverged(format!("scheduling LP ended with {:?}", rep.status)));
    }
    let a = (0..k).map(|s| (0..n).map(|m| rep.x[s * n + m].clamp(0.0, 1.0)).collect()).collect();
    Ok((Schedule { a }, rep.x[k * n]))
}

/// Rounds a fractional schedule to one sensor per slot.
///
/// Slots are visited in order. A slot with positive allocation goes to the
/// sensor, among those with a positive share, whose cumulative scheduled
/// time lags its fractional share the most; ties go to the lowest index.
pub fn reconstruct_binary_schedule(frac: &Schedule) -> Schedule {
    let k = frac.n_sensors();
    let n = frac.n_slots();
    let mut out = vec![vec![0.0; n]; k];
    let mut deficit = vec![0.0; k];
    for m in 0..n {
        for s in 0..k {
            deficit[s] += frac.a[s][m];
        }
        let mut pick: Option<usize> = None;
        for s in 0..k {
            if frac.a[s][m] > 1e-12 && pick.map_or(true, |p| deficit[s] > deficit[p]) {
                pick = Some(s);
            }
        }
        if let Some(s) = pick {
            out[s][m] = 1.0;
            deficit[s] -= 1.0;
        }
    }
    Schedule { a: out }
}

/// How the elevation enters the vertical step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VerticalAngle {
    /// Exact `atan(z/ρ)`, which keeps the rate bound global.
    #[default]
    Exact,
    /// First-order upper bound of the arctangent at the expansion altitude.
    TaylorUpper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdOptions {
    pub max_iters: usize,
    pub horizontal: bool,
    pub vertical: bool,
    pub vertical_angle: VerticalAngle,
    /// Weight of the average surrogate rate added to the max-min objective
    /// of the trajectory steps. Without it, a sensor whose rate cannot grow
    /// freezes the other sensors' parts of the path, and the scheduling step
    /// never sees slack to redistribute.
    pub sum_weight: f64,
    pub smooth: SmoothOptions,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            horizontal: true,
            vertical: true,
            vertical_angle: VerticalAngle::Exact,
            sum_weight: 0.05,
            smooth: SmoothOptions::default(),
        }
    }
}

/// Smoothing length in the horizontal distance `sqrt(‖q − w‖² + ε²)`, m.
const DIST_SMOOTHING_M: f64 = 1e-3;
const MIN_SHARE: f64 = 1e-12;

/// Outcome of one trajectory block.
#[derive(Debug, Clone)]
pub struct BlockResult {
    pub trajectory: Trajectory,
    /// Max-min value of the concave surrogate at the returned trajectory.
    pub surrogate_eta: f64,
    pub report: Option<SolveReport>,
}

/// One scheduled `(slot, share)` term of a sensor's rate constraint.
struct HorizontalTerm {
    /// Variable offset of the waypoint's x coordinate.
    var: usize,
    weight: f64,
    w: Point2,
    c: SurrogateCoeffs,
    /// Exponent slope `B2' Λ̂`.
    slope: f64,
    /// Exponent at `ρ_ε = 0`: `−B1 − B2' v̂ − B2' Λ̂ ρ̂`.
    offset: f64,
}

impl HorizontalTerm {
    fn new(var: usize, weight: f64, w: Point2, c: SurrogateCoeffs, params: &ChannelParams) -> Self {
        let b2 = params.los.b2_per_rad();
        let slope = b2 * c.lambda_hat;
        let offset = -params.los.b1 - b2 * c.v_hat - slope * c.rho_hat;
        Self { var, weight, w, c, slope, offset }
    }

    fn parts(&self, x: &[f64]) -> (f64, f64, f64, f64) {
        let ux = x[self.var] - self.w.x;
        let uy = x[self.var + 1] - self.w.y;
        let d2 = ux * ux + uy * uy;
        let rho = (d2 + DIST_SMOOTHING_M * DIST_SMOOTHING_M).sqrt();
        (ux, uy, d2, rho)
    }

    fn exp_term(&self, rho: f64) -> f64 {
        if self.c.omega_hat > 0.0 {
            (self.offset + self.slope * rho).exp()
        } else {
            0.0
        }
    }

    /// Concave lower bound of the expected LoS rate at the waypoint in `x`.
    fn value(&self, x: &[f64]) -> f64 {
        let (_, _, d2, rho) = self.parts(x);
        let c = &self.c;
        let mut v = c.r_hat - c.psi_hat * (d2 - c.rho_hat * c.rho_hat);
        if c.omega_hat > 0.0 {
            v -= c.omega_hat * (self.exp_term(rho) - (-c.phi_hat).exp());
        }
        v
    }

    fn gradient(&self, x: &[f64]) -> (f64, f64) {
        let (ux, uy, _, rho) = self.parts(x);
        let e = self.exp_term(rho);
        let radial = self.c.omega_hat * e * self.slope / rho;
        (-radial * ux - 2.0 * self.c.psi_hat * ux, -radial * uy - 2.0 * self.c.psi_hat * uy)
    }

    /// Adds `scale · ∇²(−value)` (positive semidefinite) to `h`.
    fn add_neg_hessian(&self, x: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        let (ux, uy, _, rho) = self.parts(x);
        let e = self.exp_term(rho);
        let oe = self.c.omega_hat * e;
        let a = self.slope;
        let u = [ux, uy];
        for i in 0..2 {
            for j in 0..2 {
                let uu = u[i] * u[j] / (rho * rho);
                let id = if i == j { 1.0 } else { 0.0 };
                let v = oe * (a * a * uu + a * (id - uu) / rho) + 2.0 * self.c.psi_hat * id;
                h[(self.var + i, self.var + j)] += scale * v;
            }
        }
    }
}

/// `η − Σ_terms weight · bound ≤ 0` for one sensor; `fixed` covers pinned waypoints.
struct HorizontalRateConstraint {
    eta: usize,
    fixed: f64,
    terms: Vec<HorizontalTerm>,
}

impl SmoothFn for HorizontalRateConstraint {
    fn value(&self, x: &[f64]) -> f64 {
        x[self.eta] - self.fixed - self.terms.iter().map(|t| t.weight * t.value(x)).sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.push((self.eta, 1.0));
        for t in &self.terms {
            let (gx, gy) = t.gradient(x);
            out.push((t.var, -t.weight * gx));
            out.push((t.var + 1, -t.weight * gy));
        }
    }
    fn add_hessian(&self, x: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        for t in &self.terms {
            t.add_neg_hessian(x, scale * t.weight, h);
        }
    }
}

/// `(‖p_b − p_a‖² − S²) / S² ≤ 0` where either end may be a pinned point.
struct StepLength {
    a: Endpoint,
    b: Endpoint,
    cap_sq: f64,
}

/// A waypoint that is either a pair of variables or a constant.
#[derive(Clone, Copy)]
enum Endpoint {
    Var(usize),
    Fixed(Point2),
}

impl Endpoint {
    fn get(&self, x: &[f64]) -> (f64, f64) {
        match *self {
            Endpoint::Var(i) => (x[i], x[i + 1]),
            Endpoint::Fixed(p) => (p.x, p.y),
        }
    }
}

impl SmoothFn for StepLength {
    fn value(&self, x: &[f64]) -> f64 {
        let (ax, ay) = self.a.get(x);
        let (bx, by) = self.b.get(x);
        ((bx - ax).powi(2) + (by - ay).powi(2) - self.cap_sq) / self.cap_sq
    }
    fn gradient(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        let (ax, ay) = self.a.get(x);
        let (bx, by) = self.b.get(x);
        let (dx, dy) = (2.0 * (bx - ax) / self.cap_sq, 2.0 * (by - ay) / self.cap_sq);
        if let Endpoint::Var(i) = self.a {
            out.push((i, -dx));
            out.push((i + 1, -dy));
        }
        if let Endpoint::Var(j) = self.b {
            out.push((j, dx));
            out.push((j + 1, dy));
        }
    }
    fn add_hessian(&self, _x: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        let s = 2.0 * scale / self.cap_sq;
        let vars: Vec<(usize, f64)> = [(self.a, -1.0), (self.b, 1.0)]
            .into_iter()
            .filter_map(|(p, sign)| if let Endpoint::Var(i) = p { Some((i, sign)) } else { None })
            .collect();
        for &(i, si) in &vars {
            for &(j, sj) in &vars {
                h[(i, j)] += s * si * sj;
                h[(i + 1, j + 1)] += s * si * sj;
            }
        }
    }
}

fn surrogate_objective(rates: impl Fn(usize) -> f64, k: usize) -> f64 {
    (0..k).map(rates).fold(f64::INFINITY, f64::min)
}

/// Shares one constraint between the constraint list and the objective.
struct Shared(Arc<dyn SmoothFn>);

impl SmoothFn for Shared {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        self.0.gradient(x, out)
    }
    fn add_hessian(&self, x: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        self.0.add_hessian(x, scale, h)
    }
}

/// `−η − w · mean_k bound_k`, written through the rate constraints
/// `c_k = η − bound_k` as `−(1 + w) η + (w / K) Σ c_k`.
struct TieBreakObjective {
    eta: usize,
    weight: f64,
    rates: Vec<Arc<dyn SmoothFn>>,
}

impl TieBreakObjective {
    fn scale(&self) -> f64 {
        self.weight / self.rates.len() as f64
    }
}

impl SmoothFn for TieBreakObjective {
    fn value(&self, x: &[f64]) -> f64 {
        -(1.0 + self.weight) * x[self.eta] + self.scale() * self.rates.iter().map(|c| c.value(x)).sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.push((self.eta, -(1.0 + self.weight)));
        let s = self.scale();
        let mut buf = Vec::new();
        for c in &self.rates {
            buf.clear();
            c.gradient(x, &mut buf);
            out.extend(buf.iter().map(|&(j, v)| (j, s * v)));
        }
    }
    fn add_hessian(&self, x: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        let s = scale * self.scale();
        for c in &self.rates {
            c.add_hessian(x, s, h);
        }
    }
}

/// Puts the rate constraints into `constraints` and builds the objective.
fn rate_objective<C: SmoothFn + 'static>(
    rate_cons: Vec<C>,
    eta: usize,
    weight: f64,
    constraints: &mut Vec<Box<dyn SmoothFn>>,
) -> Box<dyn SmoothFn> {
    let rates: Vec<Arc<dyn SmoothFn>> = rate_cons.into_iter().map(|c| Arc::new(c) as Arc<dyn SmoothFn>).collect();
    constraints.extend(rates.iter().map(|c| Box::new(Shared(c.clone())) as Box<dyn SmoothFn>));
    if weight > 0.0 {
        Box::new(TieBreakObjective { eta, weight, rates })
    } else {
        Box::new(AffineFn { coeffs: vec![(eta, -1.0)], constant: 0.0 })
    }
}

/// Horizontal step: maximizes the max-min surrogate rate over the interior
/// waypoints with altitudes and schedule fixed.
pub fn optimize_horizontal(
    schedule: &Schedule,
    current: &Trajectory,
    sensors: &[Point2],
    params: &ChannelParams,
    cfg: &MissionConfig,
    opts: &BcdOptions,
) -> Result<BlockResult> {
    check_inputs(sensors, params)?;
    let n = current.n_slots();
    let wp = &current.waypoints;
    let free = n.saturating_sub(1);
    let unchanged = || -> Result<BlockResult> {
        let eta = min_rate(current, schedule, sensors, params);
        Ok(BlockResult { trajectory: current.clone(), surrogate_eta: eta, report: None })
    };
    if free == 0 || cfg.s_xy() <= 0.0 {
        return unchanged();
    }
    let var = |i: usize| 2 * (i - 1);
    let eta = 2 * free;
    let inv_n = 1.0 / n as f64;

    let mut constraints: Vec<Box<dyn SmoothFn>> = Vec::new();
    let mut start = Vec::with_capacity(2 * free + 1);
    for p in &wp[1..n] {
        start.push(p.q.x);
        start.push(p.q.y);
    }
    start.push(0.0);
    let mut rate_cons = Vec::new();
    for (k, w) in sensors.iter().enumerate() {
        let g = params.gamma(k);
        let share0 = schedule.a[k][0];
        let fixed = inv_n * share0 * expected_rate_lb(wp[0].q, wp[0].z, *w, g, params);
        let terms: Vec<HorizontalTerm> = (1..n)
            .filter(|&i| schedule.a[k][i] > MIN_SHARE)
            .map(|i| {
                let c = surrogate_at(wp[i].q.dist(*w), wp[i].z, g, params);
                HorizontalTerm::new(var(i), inv_n * schedule.a[k][i], *w, c, params)
            })
            .collect();
        rate_cons.push(HorizontalRateConstraint { eta, fixed, terms });
    }
    let start_eta = {
        let x = &start;
        surrogate_objective(|k| rate_cons[k].fixed + rate_cons[k].terms.iter().map(|t| t.weight * t.value(x)).sum::<f64>(), sensors.len())
    };
    start[eta] = start_eta;
    let objective = rate_objective(rate_cons, eta, opts.sum_weight, &mut constraints);
    let cap_sq = cfg.s_xy() * cfg.s_xy();
    for i in 0..n {
        let end = |j: usize| if j == 0 || j == n { Endpoint::Fixed(wp[j].q) } else { Endpoint::Var(var(j)) };
        constraints.push(Box::new(StepLength { a: end(i), b: end(i + 1), cap_sq }));
    }
    let prog = SmoothConvexProgram {
        n: 2 * free + 1,
        objective,
        constraints,
        bounds: BoxBounds::unbounded(2 * free + 1),
        equalities: Vec::new(),
        start,
    };
    let rep = solve_smooth(&prog, &opts.smooth)?;
    let mut trajectory = current.clone();
    for i in 1..n {
        trajectory.waypoints[i].q = Point2::new(rep.x[var(i)], rep.x[var(i) + 1]);
    }
    Ok(BlockResult { trajectory, surrogate_eta: rep.x[eta], report: Some(rep) })
}

/// One scheduled term of a sensor's rate constraint in the vertical step.
struct VerticalTerm {
    var: usize,
    weight: f64,
    rho: f64,
    c: SurrogateCoeffs,
    neg_b1: f64,
    b2: f64,
    mode: VerticalAngle,
}

impl VerticalTerm {
    /// Exponential term `exp(−φ(z))` and its first two derivatives.
    fn exp_parts(&self, z: f64) -> (f64, f64, f64) {
        if !(self.c.omega_hat > 0.0) {
            return (0.0, 0.0, 0.0);
        }
        match self.mode {
            VerticalAngle::Exact => {
                let r2 = self.rho * self.rho + z * z;
                let d = self.rho / r2;
                let dd = -2.0 * self.rho * z / (r2 * r2);
                let e = (self.neg_b1 - self.b2 * z.atan2(self.rho)).exp();
                (e, -self.b2 * d * e, e * (self.b2 * self.b2 * d * d - self.b2 * dd))
            }
            VerticalAngle::TaylorUpper => {
                let z0 = self.c.z_hat;
                let d0 = self.rho / (self.rho * self.rho + z0 * z0);
                let e = (self.neg_b1 - self.b2 * (self.c.v_hat + d0 * (z - z0))).exp();
                (e, -self.b2 * d0 * e, self.b2 * self.b2 * d0 * d0 * e)
            }
        }
    }

    fn value(&self, z: f64) -> f64 {
        let c = &self.c;
        let (e, _, _) = self.exp_parts(z);
        let mut v = c.r_hat - c.psi_hat * (z * z - c.z_hat * c.z_hat);
        if c.omega_hat > 0.0 {
            v -= c.omega_hat * (e - (-c.phi_hat).exp());
        }
        v
    }

    fn derivative(&self, z: f64) -> f64 {
        let (_, e1, _) = self.exp_parts(z);
        -self.c.omega_hat * e1 - 2.0 * self.c.psi_hat * z
    }

    fn neg_second_derivative(&self, z: f64) -> f64 {
        let (_, _, e2) = self.exp_parts(z);
        self.c.omega_hat * e2 + 2.0 * self.c.psi_hat
    }
}

struct VerticalRateConstraint {
    eta: usize,
    fixed: f64,
    terms: Vec<VerticalTerm>,
}

impl SmoothFn for VerticalRateConstraint {
    fn value(&self, x: &[f64]) -> f64 {
        x[self.eta] - self.fixed - self.terms.iter().map(|t| t.weight * t.value(x[t.var])).sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.push((self.eta, 1.0));
        for t in &self.terms {
            out.push((t.var, -t.weight * t.derivative(x[t.var])));
        }
    }
    fn add_hessian(&self, x: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        for t in &self.terms {
            h[(t.var, t.var)] += scale * t.weight * t.neg_second_derivative(x[t.var]);
        }
    }
}

/// Vertical step: maximizes the max-min surrogate rate over the interior
/// altitudes with horizontal positions and schedule fixed.
pub fn optimize_vertical(
    schedule: &Schedule,
    current: &Trajectory,
    sensors: &[Point2],
    params: &ChannelParams,
    cfg: &MissionConfig,
    opts: &BcdOptions,
) -> Result<BlockResult> {
    check_inputs(sensors, params)?;
    let n = current.n_slots();
    let wp = &current.waypoints;
    let free = n.saturating_sub(1);
    if free == 0 || cfg.s_z() <= 0.0 || cfg.h_min >= cfg.h_max {
        let eta = min_rate(current, schedule, sensors, params);
        return Ok(BlockResult { trajectory: current.clone(), surrogate_eta: eta, report: None });
    }
    let var = |i: usize| i - 1;
    let eta = free;
    let inv_n = 1.0 / n as f64;
    let b2 = params.los.b2_per_rad();

    let mut start: Vec<f64> = wp[1..n].iter().map(|p| p.z).collect();
    start.push(0.0);
    let mut rate_cons = Vec::new();
    for (k, w) in sensors.iter().enumerate() {
        let g = params.gamma(k);
        let fixed = inv_n * schedule.a[k][0] * expected_rate_lb(wp[0].q, wp[0].z, *w, g, params);
        let terms: Vec<VerticalTerm> = (1..n)
            .filter(|&i| schedule.a[k][i] > MIN_SHARE)
            .map(|i| {
                let rho = wp[i].q.dist(*w);
                VerticalTerm {
                    var: var(i),
                    weight: inv_n * schedule.a[k][i],
                    rho,
                    c: surrogate_at(rho, wp[i].z, g, params),
                    neg_b1: -params.los.b1,
                    b2,
                    mode: opts.vertical_angle,
                }
            })
            .collect();
        rate_cons.push(VerticalRateConstraint { eta, fixed, terms });
    }
    start[eta] = surrogate_objective(
        |k| rate_cons[k].fixed + rate_cons[k].terms.iter().map(|t| t.weight * t.value(start[t.var])).sum::<f64>(),
        sensors.len(),
    );
    let mut constraints: Vec<Box<dyn SmoothFn>> = Vec::new();
    let objective = rate_objective(rate_cons, eta, opts.sum_weight, &mut constraints);
    let s_z = cfg.s_z();
    for i in 0..n {
        // ±(z_{i+1} − z_i − S_z)/S_z ≤ 0 with pinned endpoints folded into the constant.
        let mut diff: Vec<(usize, f64)> = Vec::new();
        let mut constant = 0.0;
        for (j, sign) in [(i + 1, 1.0), (i, -1.0)] {
            if j == 0 || j == n {
                constant += sign * wp[j].z;
            } else {
                diff.push((var(j), sign));
            }
        }
        for dir in [1.0, -1.0] {
            constraints.push(Box::new(AffineFn {
                coeffs: diff.iter().map(|&(j, a)| (j, dir * a / s_z)).collect(),
                constant: (dir * constant - s_z) / s_z,
            }));
        }
    }
    let mut lo = vec![cfg.h_min; free + 1];
    let mut hi = vec![cfg.h_max; free + 1];
    lo[eta] = f64::NEG_INFINITY;
    hi[eta] = f64::INFINITY;
    let prog = SmoothConvexProgram {
        n: free + 1,
        objective,
        constraints,
        bounds: BoxBounds { lo, hi },
        equalities: Vec::new(),
        start,
    };
    let rep = solve_smooth(&prog, &opts.smooth)?;
    let mut trajectory = current.clone();
    for i in 1..n {
        trajectory.waypoints[i].z = rep.x[var(i)].clamp(cfg.h_min, cfg.h_max);
    }
    Ok(BlockResult { trajectory, surrogate_eta: rep.x[eta], report: Some(rep) })
}

/// Result of the offline design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSolution {
    pub mission: MissionConfig,
    pub sensors: Vec<Point2>,
    pub trajectory: Trajectory,
    /// Binary schedule after rounding.
    pub schedule: Schedule,
    /// Max-min rate of the binary schedule on the trajectory.
    pub eta: f64,
    /// Max-min rate of the fractional schedule before rounding.
    pub eta_fractional: f64,
    /// Scheduling-LP value after each trajectory update, starting from the
    /// straight flight.
    pub eta_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl OfflineSolution {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sol: Self = serde_json::from_str(s)?;
        sol.mission.validate()?;
        sol.trajectory.validate(&sol.mission, 1e-6)?;
        Ok(sol)
    }
}

/// Block coordinate descent from the straight flight.
pub fn bcd_optimize(
    cfg: &MissionConfig,
    sensors: &[Point2],
    params: &ChannelParams,
    opts: &BcdOptions,
) -> Result<OfflineSolution> {
    check_inputs(sensors, params)?;
    let traj0 = init_trajectory(cfg)?;
    bcd_from(cfg, sensors, params, opts, traj0)
}

/// Block coordinate descent from the straight flight and from the sensor
/// tour; keeps the design with the larger max-min rate. Different visiting
/// orders are separate local optima that trajectory steps cannot cross.
pub fn bcd_multi_start(
    cfg: &MissionConfig,
    sensors: &[Point2],
    params: &ChannelParams,
    opts: &BcdOptions,
) -> Result<OfflineSolution> {
    let straight = bcd_optimize(cfg, sensors, params, opts)?;
    let Some(tour) = tour_trajectory(cfg, sensors)? else {
        return Ok(straight);
    };
    let toured = bcd_from(cfg, sensors, params, opts, tour)?;
    Ok(if toured.eta > straight.eta { toured } else { straight })
}

/// Block coordinate descent from a given feasible trajectory.
pub fn bcd_from(
    cfg: &MissionConfig,
    sensors: &[Point2],
    params: &ChannelParams,
    opts: &BcdOptions,
    mut traj: Trajectory,
) -> Result<OfflineSolution> {
    check_inputs(sensors, params)?;
    traj.validate(cfg, 1e-6)?;
    let (mut sched, mut eta) = optimize_scheduling(&traj, sensors, params)?;
    let mut trace = vec![eta];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let mut current = min_rate(&traj, &sched, sensors, params);
        if opts.horizontal {
            let step = optimize_horizontal(&sched, &traj, sensors, params, cfg, opts)?;
            let value = min_rate(&step.trajectory, &sched, sensors, params);
            if value >= current && step.trajectory.validate(cfg, 1e-6).is_ok() {
                traj = step.trajectory;
                current = value;
            }
        }
        if opts.vertical {
            let step = optimize_vertical(&sched, &traj, sensors, params, cfg, opts)?;
            let value = min_rate(&step.trajectory, &sched, sensors, params);
            if value >= current && step.trajectory.validate(cfg, 1e-6).is_ok() {
                traj = step.trajectory;
            }
        }
        let (s, e) = optimize_scheduling(&traj, sensors, params)?;
        let gain = e - eta;
        // The previous schedule stays feasible, so a lower LP value is solver noise.
        if e >= eta {
            sched = s;
            eta = e;
        }
        trace.push(eta);
        if gain < cfg.eps_bcd {
            converged = true;
            break;
        }
    }
    let binary = reconstruct_binary_schedule(&sched);
    let eta_binary = min_rate(&traj, &binary, sensors, params);
    Ok(OfflineSolution {
        mission: cfg.clone(),
        sensors: sensors.to_vec(),
        trajectory: traj,
        schedule: binary,
        eta: eta_binary,
        eta_fractional: eta,
        eta_trace: trace,
        iterations,
        converged,
    })
}
