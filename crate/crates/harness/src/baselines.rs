//! Reference designs the proposed scheme is compared against, and the
//! sensor layout sampler.

use anyhow::{bail, ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skyharvest::channel::{expected_rate_lb, ChannelParams};
use skyharvest::citygen::CityRealization;
use skyharvest::offline::{bcd_multi_start, BcdOptions, MissionConfig, OfflineSolution};
use skyharvest::online::{plan_remaining, realized_rates, sample_channel_states, PathSegment};
use skyharvest::Point2;

/// Square the sensors are drawn from, m.
pub const LAYOUT_LO: f64 = 30.0;
pub const LAYOUT_HI: f64 = 270.0;
/// Minimum distance between two sensors, m.
pub const LAYOUT_SEPARATION: f64 = 60.0;

/// Seeded uniform layout with a minimum pairwise separation, by rejection.
pub fn sensor_layout(k: usize, seed: u64) -> Result<Vec<Point2>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let mut pts: Vec<Point2> = Vec::with_capacity(k);
        let mut draws = 0;
        while pts.len() < k && draws < 10_000 {
            draws += 1;
            let p = Point2::new(rng.gen_range(LAYOUT_LO..LAYOUT_HI), rng.gen_range(LAYOUT_LO..LAYOUT_HI));
            if pts.iter().all(|q| q.dist(p) >= LAYOUT_SEPARATION) {
                pts.push(p);
            }
        }
        if pts.len() == k {
            return Ok(pts);
        }
    }
    bail!("could not place {k} sensors {LAYOUT_SEPARATION} m apart")
}

/// Offline design under the belief that every link is LoS.
pub fn baseline_lb(cfg: &MissionConfig, sensors: &[Point2], params: &ChannelParams) -> Result<OfflineSolution> {
    let los_only = params.clone().with_los_model(params.los.always_los());
    Ok(bcd_multi_start(cfg, sensors, &los_only, &BcdOptions::default())?)
}

/// Offline design with the altitude held at `h_min`; the end points are
/// moved down to `h_min` as well.
pub fn baseline_plla(cfg: &MissionConfig, sensors: &[Point2], params: &ChannelParams) -> Result<OfflineSolution> {
    let low = MissionConfig::new(
        cfg.t0,
        cfg.q_start,
        cfg.h_min,
        cfg.q_end,
        cfg.h_min,
        cfg.v_xy_max,
        cfg.v_z_max,
        cfg.h_min,
        cfg.h_max,
        cfg.eps_max,
        cfg.eps_bcd,
    )?;
    let opts = BcdOptions { vertical: false, ..BcdOptions::default() };
    Ok(bcd_multi_start(&low, sensors, params, &opts)?)
}

/// Hover point of the static baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticPlacement {
    pub position: Point2,
    pub altitude: f64,
    /// Expected LoS rate bound of each sensor at the hover point, bps/Hz.
    pub expected_rates: Vec<f64>,
}

impl StaticPlacement {
    /// Max-min average rate if the hover time is split to equalize the
    /// expected rates.
    pub fn expected_eta(&self) -> f64 {
        1.0 / self.expected_rates.iter().map(|r| 1.0 / r).sum::<f64>()
    }
}

/// Centroid of the sensors (one-cluster k-means) and the altitude on a 1 m
/// grid over `[h_min, h_max]` that maximizes the smallest expected rate.
pub fn static_placement(sensors: &[Point2], params: &ChannelParams, h_min: f64, h_max: f64) -> Result<StaticPlacement> {
    ensure!(!sensors.is_empty(), "no sensors");
    ensure!(h_min > 0.0 && h_min <= h_max, "invalid altitude range");
    let n = sensors.len() as f64;
    let position = Point2::new(sensors.iter().map(|p| p.x).sum::<f64>() / n, sensors.iter().map(|p| p.y).sum::<f64>() / n);
    let steps = (h_max - h_min).floor() as usize;
    let rates_at = |z: f64| -> Vec<f64> {
        sensors.iter().enumerate().map(|(k, w)| expected_rate_lb(position, z, *w, params.gamma(k), params)).collect()
    };
    let mut best = (h_min, f64::NEG_INFINITY);
    for i in 0..=steps {
        let z = h_min + i as f64;
        let worst = rates_at(z).into_iter().fold(f64::INFINITY, f64::min);
        if worst > best.1 {
            best = (z, worst);
        }
    }
    Ok(StaticPlacement { position, altitude: best.0, expected_rates: rates_at(best.0) })
}

/// Average rate per sensor when hovering at the placement for `t0` seconds
/// in `city`, with the transmission times split by the max-min LP.
pub fn baseline_static(
    placement: &StaticPlacement,
    sensors: &[Point2],
    city: &CityRealization,
    params: &ChannelParams,
    t0: f64,
) -> Result<Vec<f64>> {
    let start = placement.position.with_z(placement.altitude);
    let states = sample_channel_states(city, start, sensors);
    let seg = PathSegment { index: 0, start, h_len: 0.0, v_len: 0.0, t_hat: 0.0, expected_rates: vec![0.0; sensors.len()] };
    let rates = realized_rates(&seg, sensors, &states, params);
    let columns: Vec<Vec<f64>> = rates.iter().map(|r| vec![*r]).collect();
    let plan = plan_remaining(&vec![0.0; sensors.len()], &columns, &[0.0], t0, t0, Some(t0))?;
    Ok(plan.tau.iter().zip(&rates).map(|(tau, r)| tau[0] * r / t0).collect())
}
