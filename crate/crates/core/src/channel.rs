//! Air-to-ground propagation: the generalized-logistic LoS probability, its
//! regression fit, path-loss gains, conditional and expected rates, and the
//! coefficients of the first-order rate and angle lower bounds.
//!
//! Angles enter the logistic model in degrees. Rates are in bps/Hz.

use crate::citygen::LosSampleTable;
use crate::error::{invalid, Error, Result};
use crate::geom::Point2;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::LOG2_E;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Parameters of `P(θ) = b3 + b4 / (1 + exp(-(b1 + b2 θ)))`, θ in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LosModel {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
}

impl LosModel {
    pub const URBAN: LosModel = LosModel { b1: -0.4568, b2: 0.0470, b3: -0.63, b4: 1.63 };

    /// Degenerate model with every link in LoS.
    pub fn always_los(self) -> Self {
        Self { b3: 1.0, b4: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b1.is_finite() && self.b2.is_finite() && self.b3.is_finite() && self.b4.is_finite()) {
            return Err(invalid("LoS model coefficients must be finite"));
        }
        if (self.b3 + self.b4 - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("b3 + b4 = {} must equal 1", self.b3 + self.b4)));
        }
        if !(self.b2 > 0.0) {
            return Err(invalid("b2 must be positive"));
        }
        let always_los = self.b4 == 0.0 && self.b3 == 1.0;
        if !(self.b4 > 0.0 || always_los) {
            return Err(invalid("b4 must be positive"));
        }
        Ok(())
    }

    /// Logistic exponent `b1 + b2 θ`.
    pub fn phi(&self, theta_deg: f64) -> f64 {
        self.b1 + self.b2 * theta_deg
    }

    /// Slope of the exponent per radian.
    pub fn b2_per_rad(&self) -> f64 {
        self.b2.to_degrees()
    }

    pub fn probability(&self, theta_deg: f64) -> f64 {
        self.b3 + self.b4 / (1.0 + (-self.phi(theta_deg)).exp())
    }
}

/// Propagation constants shared by all sensors, plus per-sensor transmit power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    #[serde(flatten)]
    pub los: LosModel,
    /// Channel power gain at 1 m (linear).
    pub beta0: f64,
    /// Extra NLoS attenuation (linear, < 1).
    pub mu: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    /// SNR gap of the practical modulation (linear).
    pub snr_gap: f64,
    /// Receiver noise power, W.
    pub noise_power: f64,
    /// Transmit power of each sensor, W.
    pub tx_power: Vec<f64>,
}

impl ChannelParams {
    /// Urban constants: β0 = -60 dB, μ = -20 dB, exponents 2.5/3.5,
    /// Γ = 8.2 dB, σ² = -109 dBm and 0.1 W per sensor.
    pub fn urban(k: usize) -> Self {
        Self {
            los: LosModel::URBAN,
            beta0: db_to_linear(-60.0),
            mu: db_to_linear(-20.0),
            alpha_los: 2.5,
            alpha_nlos: 3.5,
            snr_gap: db_to_linear(8.2),
            noise_power: dbm_to_watts(-109.0),
            tx_power: vec![0.1; k],
        }
    }

    pub fn with_los_model(mut self, los: LosModel) -> Self {
        self.los = los;
        self
    }

    pub fn sensor_count(&self) -> usize {
        self.tx_power.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.los.validate()?;
        if !(self.beta0 > 0.0 && self.snr_gap > 0.0 && self.noise_power > 0.0) {
            return Err(invalid("beta0, snr_gap and noise_power must be positive"));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(invalid("mu must lie in (0,1)"));
        }
        if !(2.0 <= self.alpha_los && self.alpha_los < self.alpha_nlos && self.alpha_nlos <= 6.0) {
            return Err(invalid("path-loss exponents must satisfy 2 <= alpha_los < alpha_nlos <= 6"));
        }
        if self.tx_power.is_empty() || self.tx_power.iter().any(|p| !(*p > 0.0)) {
            return Err(invalid("every sensor needs a positive transmit power"));
        }
        Ok(())
    }

    /// Reference received SNR `β0 P_k / (σ² Γ)` of sensor `k`.
    pub fn gamma(&self, k: usize) -> f64 {
        self.beta0 * self.tx_power[k] / (self.noise_power * self.snr_gap)
    }

    pub fn gammas(&self) -> Vec<f64> {
        (0..self.sensor_count()).map(|k| self.gamma(k)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

/// Elevation angle in degrees of a UAV at `(q, z)` seen from ground point `w`.
pub fn elevation_angle(q: Point2, z: f64, w: Point2) -> Result<f64> {
    if !(z > 0.0) {
        return Err(invalid(format!("altitude {z} must be positive")));
    }
    Ok(elevation_deg(q.dist(w), z))
}

pub(crate) fn elevation_deg(rho: f64, z: f64) -> f64 {
    z.atan2(rho).to_degrees()
}

pub fn los_probability(theta_deg: f64, p: &ChannelParams) -> f64 {
    p.los.probability(theta_deg)
}

/// Large-scale channel power gain at distance `d`.
pub fn channel_gain(d: f64, los: bool, p: &ChannelParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(invalid(format!("distance {d} must be positive")));
    }
    Ok(if los { p.beta0 * d.powf(-p.alpha_los) } else { p.mu * p.beta0 * d.powf(-p.alpha_nlos) })
}

pub fn rate_conditional(d: f64, los: bool, gamma: f64, p: &ChannelParams) -> f64 {
    let snr = if los { gamma / d.powf(p.alpha_los) } else { p.mu * gamma / d.powf(p.alpha_nlos) };
    snr.ln_1p() * LOG2_E
}

fn rate_from_dist_sq(dist_sq: f64, alpha: f64, gain: f64) -> f64 {
    (gain / dist_sq.powf(alpha / 2.0)).ln_1p() * LOG2_E
}

/// LoS probability, LoS rate and NLoS rate at a UAV position.
fn link_terms(q: Point2, z: f64, w: Point2, gamma: f64, p: &ChannelParams) -> (f64, f64, f64) {
    let rho = q.dist(w);
    let dist_sq = rho * rho + z * z;
    let pl = p.los.probability(elevation_deg(rho, z));
    let r_los = rate_from_dist_sq(dist_sq, p.alpha_los, gamma);
    let r_nlos = rate_from_dist_sq(dist_sq, p.alpha_nlos, p.mu * gamma);
    (pl, r_los, r_nlos)
}

/// Expected rate over the LoS/NLoS states.
pub fn expected_rate(q: Point2, z: f64, w: Point2, gamma: f64, p: &ChannelParams) -> f64 {
    let (pl, rl, rn) = link_terms(q, z, w, gamma, p);
    pl * rl + (1.0 - pl) * rn
}

/// Lower bound on the expected rate that drops the NLoS contribution.
pub fn expected_rate_lb(q: Point2, z: f64, w: Point2, gamma: f64, p: &ChannelParams) -> f64 {
    let (pl, rl, _) = link_terms(q, z, w, gamma, p);
    pl * rl
}

/// Rate at the expected channel gain; an over-estimate by concavity.
pub fn expected_rate_jensen(q: Point2, z: f64, w: Point2, gamma: f64, p: &ChannelParams) -> f64 {
    let rho = q.dist(w);
    let d = rho.hypot(z);
    let pl = p.los.probability(elevation_deg(rho, z));
    let mean_gain_ratio = pl * d.powf(-p.alpha_los) + (1.0 - pl) * p.mu * d.powf(-p.alpha_nlos);
    (gamma * mean_gain_ratio).ln_1p() * LOG2_E
}

/// `(b3 + b4/x) log2(1 + γ / y^(α/2))`.
pub fn psi(x: f64, y: f64, gamma: f64, alpha: f64, b3: f64, b4: f64) -> f64 {
    (b3 + b4 / x) * rate_from_dist_sq(y, alpha, gamma)
}

/// Coefficients of the rate lower bound
/// `r̂ - Ω̂ (e^{-φ} - e^{-φ̂}) - Ψ̂ (d² - d̂²)` and of the elevation lower
/// bound `v̂ - Λ̂ (ρ - ρ̂)` around one expansion point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateCoeffs {
    pub r_hat: f64,
    pub omega_hat: f64,
    pub psi_hat: f64,
    /// Elevation at the expansion point, rad.
    pub v_hat: f64,
    /// Elevation slope with respect to horizontal distance, rad/m.
    pub lambda_hat: f64,
    pub phi_hat: f64,
    /// Horizontal distance at the expansion point, m.
    pub rho_hat: f64,
    /// Altitude at the expansion point, m.
    pub z_hat: f64,
}

impl SurrogateCoeffs {
    /// Rate bound as a function of the logistic exponent and the squared
    /// 3D distance.
    pub fn rate_bound(&self, phi: f64, dist_sq: f64) -> f64 {
        let y_hat = self.rho_hat * self.rho_hat + self.z_hat * self.z_hat;
        self.r_hat - self.omega_hat * ((-phi).exp() - (-self.phi_hat).exp()) - self.psi_hat * (dist_sq - y_hat)
    }

    /// Elevation lower bound in radians at horizontal distance `rho`.
    pub fn angle_bound(&self, rho: f64) -> f64 {
        self.v_hat - self.lambda_hat * (rho - self.rho_hat)
    }

    /// Rate bound at horizontal distance `rho` and the expansion altitude,
    /// with the elevation replaced by its lower bound.
    pub fn horizontal_bound(&self, rho: f64, los: &LosModel) -> f64 {
        let phi = los.b1 + los.b2_per_rad() * self.angle_bound(rho);
        self.rate_bound(phi, rho * rho + self.z_hat * self.z_hat)
    }

    /// Rate bound at altitude `z` and the expansion horizontal distance,
    /// with the exact elevation.
    pub fn vertical_bound(&self, z: f64, los: &LosModel) -> f64 {
        let phi = los.b1 + los.b2_per_rad() * z.atan2(self.rho_hat);
        self.rate_bound(phi, self.rho_hat * self.rho_hat + z * z)
    }
}

/// Bound coefficients around horizontal distance `rho_hat` and altitude `z_hat`.
pub fn surrogate_at(rho_hat: f64, z_hat: f64, gamma: f64, p: &ChannelParams) -> SurrogateCoeffs {
    let LosModel { b3, b4, .. } = p.los;
    let alpha = p.alpha_los;
    let v_hat = z_hat.atan2(rho_hat);
    let phi_hat = p.los.phi(v_hat.to_degrees());
    let x = 1.0 + (-phi_hat).exp();
    let y = rho_hat * rho_hat + z_hat * z_hat;
    let y_pow = y.powf(alpha / 2.0);
    let ln_term = (gamma / y_pow).ln_1p();
    SurrogateCoeffs {
        r_hat: (b3 + b4 / x) * ln_term * LOG2_E,
        omega_hat: b4 * LOG2_E / (x * x) * ln_term,
        psi_hat: (b3 + b4 / x) * gamma * (alpha / 2.0) * LOG2_E / (y * (y_pow + gamma)),
        v_hat,
        lambda_hat: z_hat / y,
        phi_hat,
        rho_hat,
        z_hat,
    }
}

/// Bound coefficients for moving the horizontal position around `q_hat` at
/// altitude `z`.
pub fn horizontal_surrogate(q_hat: Point2, z: f64, w: Point2, gamma: f64, p: &ChannelParams) -> Result<SurrogateCoeffs> {
    if !(z > 0.0) {
        return Err(invalid(format!("altitude {z} must be positive")));
    }
    Ok(surrogate_at(q_hat.dist(w), z, gamma, p))
}

/// Bound coefficients for moving the altitude around `z_hat` at fixed
/// horizontal position `q`.
pub fn vertical_surrogate(q: Point2, z_hat: f64, w: Point2, gamma: f64, p: &ChannelParams) -> Result<SurrogateCoeffs> {
    horizontal_surrogate(q, z_hat, w, gamma, p)
}

/// Result of a logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub model: LosModel,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

const FIT_GRAD_TOL: f64 = 1e-8;
const FIT_MAX_ITER: usize = 2000;

/// Outcome of one damped Gauss-Newton run.
struct LmRun {
    params: DVector<f64>,
    cost: f64,
    residuals: Vec<f64>,
    jtj: DMatrix<f64>,
    iterations: usize,
    gradient_norm: f64,
}

/// Levenberg-Marquardt on `eval(params) -> (residuals, Jacobian)`; `eval`
/// returns `None` for inadmissible parameters, which are never accepted.
fn levenberg_marquardt(
    start: DVector<f64>,
    eval: impl Fn(&DVector<f64>) -> Option<(Vec<f64>, DMatrix<f64>)>,
) -> Option<LmRun> {
    let sse = |r: &[f64]| r.iter().map(|e| e * e).sum::<f64>();
    let (mut r, mut jac) = eval(&start)?;
    let mut b = start;
    let mut cost = sse(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let normal = |jac: &DMatrix<f64>, r: &[f64]| (jac.transpose() * jac, jac.transpose() * DVector::from_column_slice(r));
    let (mut jtj, mut jtr) = normal(&jac, &r);
    while iterations < FIT_MAX_ITER && jtr.norm() > FIT_GRAD_TOL {
        iterations += 1;
        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = jtj.clone();
            for i in 0..b.len() {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = &b + step;
            if let Some((r_t, j_t)) = eval(&trial) {
                let c_t = sse(&r_t);
                if c_t <= cost {
                    b = trial;
                    r = r_t;
                    jac = j_t;
                    cost = c_t;
                    lambda = (lambda / 10.0).max(1e-15);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        (jtj, jtr) = normal(&jac, &r);
        if !improved {
            break;
        }
    }
    let gradient_norm = jtr.norm();
    Some(LmRun { params: b, cost, residuals: r, jtj, iterations, gradient_norm })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Least-squares fit of the logistic LoS model with `b4 = 1 - b3`.
///
/// The model must stay a probability at the horizon, `P(0°) ≥ 0`. Swept
/// city data that saturates at 1 overhead tends to pull `b3` towards −∞;
/// then the fit is redone on the boundary `P(0°) = 0`, i.e. `b3 = −e^{b1}`.
pub fn fit_logistic(table: &LosSampleTable) -> Result<LogisticFit> {
    table.validate()?;
    let mut thetas: Vec<f64> = table.rows.iter().map(|r| r.elevation_deg).collect();
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    if thetas.len() < 4 {
        return Err(invalid("logistic fit needs at least 4 distinct elevation bins"));
    }
    let data: Vec<(f64, f64)> = table.rows.iter().map(|r| (r.elevation_deg, r.p_los)).collect();
    let mean = data.iter().map(|d| d.1).sum::<f64>() / data.len() as f64;
    let sst: f64 = data.iter().map(|d| (d.1 - mean).powi(2)).sum();
    if sst < 1e-12 {
        return Err(Error::DegenerateFit("constant probabilities leave the slope unidentifiable".into()));
    }
    let m = data.len();

    let interior_model = |b: &DVector<f64>| LosModel { b1: b[0], b2: b[1], b3: b[2], b4: 1.0 - b[2] };
    let interior = levenberg_marquardt(DVector::from_vec(vec![-0.5, 0.05, -0.5]), |b| {
        let model = interior_model(b);
        if !(b[1] > 0.0 && b[2] < 1.0 && b.iter().all(|v| v.is_finite()) && model.probability(0.0) >= 0.0) {
            return None;
        }
        let mut jac = DMatrix::zeros(m, 3);
        let r = data
            .iter()
            .enumerate()
            .map(|(i, &(t, p))| {
                let s = sigmoid(b[0] + b[1] * t);
                let ds = (1.0 - b[2]) * s * (1.0 - s);
                jac[(i, 0)] = ds;
                jac[(i, 1)] = ds * t;
                jac[(i, 2)] = 1.0 - s;
                model.probability(t) - p
            })
            .collect();
        Some((r, jac))
    });

    let boundary_model = |b: &DVector<f64>| {
        let b3 = -b[0].exp();
        LosModel { b1: b[0], b2: b[1], b3, b4: 1.0 - b3 }
    };
    let boundary = || {
        levenberg_marquardt(DVector::from_vec(vec![(0.5f64).ln(), 0.05]), |b| {
            if !(b[1] > 0.0 && b.iter().all(|v| v.is_finite()) && b[0] < 50.0) {
                return None;
            }
            let model = boundary_model(b);
            let e = b[0].exp();
            let mut jac = DMatrix::zeros(m, 2);
            let r = data
                .iter()
                .enumerate()
                .map(|(i, &(t, p))| {
                    let s = sigmoid(b[0] + b[1] * t);
                    let ds = (1.0 + e) * s * (1.0 - s);
                    jac[(i, 0)] = -e * (1.0 - s) + ds;
                    jac[(i, 1)] = ds * t;
                    model.probability(t) - p
                })
                .collect();
            Some((r, jac))
        })
    };

    let interior_ok = interior.as_ref().is_some_and(|run| {
        run.gradient_norm <= FIT_GRAD_TOL && interior_model(&run.params).probability(0.0) > 1e-9
    });
    let (run, model) = if interior_ok {
        let run = interior.expect("checked above");
        let model = interior_model(&run.params);
        (run, model)
    } else {
        match boundary() {
            Some(run) => {
                let model = boundary_model(&run.params);
                (run, model)
            }
            None => return Err(Error::NotConverged("logistic fit found no admissible start".into())),
        }
    };

    let eig = run.jtj.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 1e-14 * hi.max(1e-300)) {
        return Err(Error::DegenerateFit(format!("ill-conditioned normal equations (eigenvalues {lo:e}..{hi:e})")));
    }
    if run.gradient_norm > FIT_GRAD_TOL {
        return Err(Error::NotConverged(format!(
            "logistic fit stopped after {} iterations with gradient norm {:e}",
            run.iterations, run.gradient_norm
        )));
    }
    Ok(LogisticFit {
        model,
        r_squared: 1.0 - run.cost / sst,
        residuals: run.residuals,
        iterations: run.iterations,
        gradient_norm: run.gradient_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::citygen::LosSample;
    use approx::assert_abs_diff_eq;

    fn example_params() -> ChannelParams {
        ChannelParams::urban(1)
    }

    #[test]
    fn sixty_point_eight_db_reference_snr() {
        let p = ChannelParams::urban(4);
        for g in p.gammas() {
            assert_abs_diff_eq!(linear_to_db(g), 60.8, epsilon = 1e-9);
        }
    }

    #[test]
    fn elevation_examples() {
        let w = Point2::new(0.0, 0.0);
        assert_eq!(elevation_angle(w, 50.0, w).unwrap(), 90.0);
        assert_abs_diff_eq!(elevation_angle(Point2::new(50.0, 0.0), 50.0, w).unwrap(), 45.0, epsilon = 1e-12);
        assert_abs_diff_eq!(elevation_angle(Point2::new(86.6025, 0.0), 50.0, w).unwrap(), 30.0, epsilon = 1e-4);
        assert!(elevation_angle(w, 0.0, w).is_err());
    }

    #[test]
    fn logistic_midpoint_and_zenith() {
        let m = LosModel::URBAN;
        assert_abs_diff_eq!(m.probability(-m.b1 / m.b2), m.b3 + m.b4 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.probability(-m.b1 / m.b2), 0.185, epsilon = 1e-12);
        assert_abs_diff_eq!(m.probability(90.0), 0.9634, epsilon = 1e-4);
        let steep = LosModel { b1: -1.0, b2: 50.0, b3: 0.0, b4: 1.0 };
        assert_abs_diff_eq!(steep.probability(60.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gains_and_rates_at_fifty_meters() {
        let p = example_params();
        assert_abs_diff_eq!(channel_gain(1.0, true, &p).unwrap(), p.beta0, epsilon = 1e-18);
        assert_abs_diff_eq!(linear_to_db(channel_gain(50.0, true, &p).unwrap()), -102.47, epsilon = 0.01);
        assert_abs_diff_eq!(linear_to_db(channel_gain(50.0, false, &p).unwrap()), -139.46, epsilon = 0.01);
        assert!(channel_gain(0.0, true, &p).is_err());
        let g = db_to_linear(60.0);
        assert_abs_diff_eq!(rate_conditional(50.0, true, g, &p), 5.847, epsilon = 1e-3);
        assert_abs_diff_eq!(rate_conditional(50.0, false, g, &p), 0.01623, epsilon = 1e-5);
        assert_eq!(rate_conditional(50.0, true, 0.0, &p), 0.0);
    }

    #[test]
    fn expected_rate_limits() {
        let w = Point2::new(0.0, 0.0);
        let q = Point2::new(30.0, 40.0);
        let g = db_to_linear(60.0);
        let d = 50f64.hypot(80.0);
        let certain = example_params().with_los_model(LosModel { b1: -1.0, b2: 1.0, b3: 1.0, b4: 0.0 });
        assert_abs_diff_eq!(expected_rate(q, 80.0, w, g, &certain), rate_conditional(d, true, g, &certain), epsilon = 1e-12);
        assert_abs_diff_eq!(expected_rate_jensen(q, 80.0, w, g, &certain), rate_conditional(d, true, g, &certain), epsilon = 1e-12);
        let never = example_params().with_los_model(LosModel { b1: -1.0, b2: 1.0, b3: 0.0, b4: 1e-300 });
        assert_abs_diff_eq!(expected_rate(q, 80.0, w, g, &never), rate_conditional(d, false, g, &never), epsilon = 1e-12);
        assert_abs_diff_eq!(expected_rate_lb(q, 80.0, w, g, &never), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn psi_at_unit_x_is_the_los_rate() {
        assert_abs_diff_eq!(psi(1.0, 2500.0, 1e6, 2.5, 0.3, 0.7), (1.0 + 1e6 / 2500f64.powf(1.25)).log2(), epsilon = 1e-12);
    }

    #[test]
    fn surrogates_are_tight() {
        let p = example_params();
        let g = p.gamma(0);
        let w = Point2::new(10.0, -20.0);
        let q = Point2::new(70.0, 15.0);
        let z = 120.0;
        let s = horizontal_surrogate(q, z, w, g, &p).unwrap();
        let truth = expected_rate_lb(q, z, w, g, &p);
        assert!((s.horizontal_bound(q.dist(w), &p.los) - truth).abs() <= 1e-12 * truth);
        assert!((s.vertical_bound(z, &p.los) - truth).abs() <= 1e-12 * truth);
        assert!((s.angle_bound(q.dist(w)) - (z / q.dist(w)).atan()).abs() < 1e-15);
    }

    #[test]
    fn lb_has_interior_altitude_optimum() {
        let p = ChannelParams::urban(1);
        let g = p.gamma(0);
        let w = Point2::new(0.0, 0.0);
        let q = Point2::new(150.0, 0.0);
        let rates: Vec<f64> = (50..=300).map(|z| expected_rate_lb(q, z as f64, w, g, &p)).collect();
        let (best, _) = rates.iter().enumerate().fold((0, f64::MIN), |a, (i, r)| if *r > a.1 { (i, *r) } else { a });
        assert!(best > 0 && best < rates.len() - 1, "argmax index {best}");
    }

    fn synthetic(model: LosModel) -> LosSampleTable {
        LosSampleTable {
            rows: (1..=18)
                .map(|i| {
                    let t = 5.0 * i as f64;
                    LosSample { elevation_deg: t, p_los: model.probability(t), n: 100 }
                })
                .collect(),
        }
    }

    #[test]
    fn fit_recovers_noiseless_urban_model() {
        let fit = fit_logistic(&synthetic(LosModel::URBAN)).unwrap();
        assert_abs_diff_eq!(fit.model.b1, LosModel::URBAN.b1, epsilon = 1e-4);
        assert_abs_diff_eq!(fit.model.b2, LosModel::URBAN.b2, epsilon = 1e-4);
        assert_abs_diff_eq!(fit.model.b3, LosModel::URBAN.b3, epsilon = 1e-4);
        assert_abs_diff_eq!(fit.model.b4, LosModel::URBAN.b4, epsilon = 1e-4);
        assert!(fit.r_squared > 1.0 - 1e-9);
    }

    #[test]
    fn fit_flags_constant_table() {
        let mut t = synthetic(LosModel::URBAN);
        t.rows.iter_mut().for_each(|r| r.p_los = 1.0);
        assert!(matches!(fit_logistic(&t), Err(Error::DegenerateFit(_))));
        t.rows.truncate(3);
        assert!(fit_logistic(&t).is_err());
    }

    #[test]
    fn saturating_data_lands_on_the_horizon_boundary() {
        // Pooled sweep of ten generated cities: the unconstrained optimum has b3 → −∞.
        let p = [
            0.085, 0.2692, 0.3875, 0.5458, 0.6025, 0.6283, 0.6783, 0.7092, 0.7533, 0.78, 0.835, 0.8675, 0.8833,
            0.9258, 0.95, 0.9775, 1.0, 1.0,
        ];
        let rows = p
            .iter()
            .enumerate()
            .map(|(i, &p_los)| LosSample { elevation_deg: 5.0 * (i + 1) as f64, p_los, n: 1200 })
            .collect();
        let fit = fit_logistic(&LosSampleTable { rows }).unwrap();
        assert_abs_diff_eq!(fit.model.probability(0.0), 0.0, epsilon = 1e-12);
        assert!(fit.model.validate().is_ok());
        // Reference values from an independent bounded least-squares solver.
        assert_abs_diff_eq!(fit.model.b1, 1.47337276, epsilon = 1e-5);
        assert_abs_diff_eq!(fit.model.b2, 0.03793409, epsilon = 1e-7);
        assert_abs_diff_eq!(fit.r_squared, 0.98260690, epsilon = 1e-6);
    }

    #[test]
    fn params_json_round_trip() {
        let p = ChannelParams::urban(3);
        assert_eq!(ChannelParams::from_json(&p.to_json().unwrap()).unwrap(), p);
    }
}
