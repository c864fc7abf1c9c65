//! Monte-Carlo evaluation over city realizations and its outputs.

use crate::baselines::{baseline_lb, baseline_plla, baseline_static, sensor_layout, static_placement, StaticPlacement};
use crate::config::{channel_params, ExperimentConfig, Scheme};
use anyhow::{ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use skyharvest::channel::{ChannelParams, LogisticFit, LosModel};
use skyharvest::citygen::{derive_seed, generate_city, CityRealization};
use skyharvest::offline::{bcd_multi_start, BcdOptions, OfflineSolution};
use skyharvest::online::{build_path, path_channel_states, run_episode, Episode, Policy, TIME_TOL};
use skyharvest::Point2;
use std::collections::BTreeMap;
use std::path::Path;

/// Offline design shared by every realization of one duration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineRecord {
    /// `PLB`, `LB` or `PLLA`.
    pub scheme: Scheme,
    pub k: usize,
    pub duration: f64,
    pub solution: OfflineSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub k: usize,
    pub duration: f64,
    pub realization: usize,
    pub city_seed: u64,
    pub min_rate: f64,
    /// Offline max-min value the flown path was designed for.
    pub offline_eta: f64,
    pub offline_iterations: usize,
    /// Per-sensor average rates, `;`-separated.
    pub rates: String,
}

impl ResultRow {
    pub fn rates(&self) -> Result<Vec<f64>> {
        self.rates.split(';').map(|s| s.parse::<f64>().with_context(|| format!("rate {s:?}"))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scheme: Scheme,
    pub k: usize,
    pub duration: f64,
    pub realization: usize,
    pub segment: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scheme: Scheme,
    pub k: usize,
    pub duration: f64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Paired comparison `better − worse` over shared realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ordering {
    pub better: Scheme,
    pub worse: Scheme,
    pub k: usize,
    pub duration: f64,
    pub n: usize,
    pub mean_gap: f64,
    pub stderr: f64,
    /// Gap ≥ −2 standard errors, or strictly positive for the static baseline.
    pub holds: bool,
}

/// Per-realization dominance `OJA ≥ JA ≥ ACS ≥ PLB`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub better: Scheme,
    pub worse: Scheme,
    pub k: usize,
    pub duration: f64,
    pub realizations: usize,
    pub violations: usize,
    /// Largest `worse − better` over the realizations.
    pub max_shortfall: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub los_model: LosModel,
    pub fit_r_squared: Option<f64>,
    pub sensors: BTreeMap<usize, Vec<Point2>>,
    pub static_placements: BTreeMap<usize, StaticPlacement>,
    pub offline: Vec<OfflineSummary>,
    pub aggregates: Vec<Aggregate>,
    pub orderings: Vec<Ordering>,
    pub dominance: Vec<Dominance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSummary {
    pub scheme: Scheme,
    pub k: usize,
    pub duration: f64,
    pub eta: f64,
    pub eta_fractional: f64,
    pub iterations: usize,
    pub converged: bool,
    pub eta_trace: Vec<f64>,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub los_model: LosModel,
    pub fit: Option<LogisticFit>,
    pub sensors: BTreeMap<usize, Vec<Point2>>,
    pub static_placements: BTreeMap<usize, StaticPlacement>,
    pub offline: Vec<OfflineRecord>,
    pub rows: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
}

fn join_rates(rates: &[f64]) -> String {
    rates.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";")
}

/// Sensor positions for `k` sensors: the configured layout if it has that
/// many points, else a seeded random one.
pub fn layout_for(cfg: &ExperimentConfig, k: usize) -> Result<Vec<Point2>> {
    match &cfg.sensor_positions {
        Some(p) if p.len() == k => Ok(p.clone()),
        _ => sensor_layout(k, derive_seed(cfg.seed, 1_000_000 + k as u64)),
    }
}

/// The realized city of one run: buildings on sensor cells are removed so
/// that every sensor stands in the street grid.
pub fn realize_city(cfg: &ExperimentConfig, city_seed: u64, sensors: &[Point2]) -> Result<CityRealization> {
    let city = generate_city(&cfg.city, city_seed)?;
    let cells: Vec<(usize, usize)> = sensors.iter().filter_map(|w| city.cell_of(*w)).collect();
    Ok(city.without_buildings_in_cells(&cells))
}

pub fn offline_design(scheme: Scheme, cfg: &ExperimentConfig, k: usize, duration: f64, sensors: &[Point2], params: &ChannelParams) -> Result<OfflineSolution> {
    let mission = cfg.mission.mission(duration)?;
    match scheme {
        Scheme::Lb => baseline_lb(&mission, sensors, params),
        Scheme::Plla => baseline_plla(&mission, sensors, params),
        _ => Ok(bcd_multi_start(&mission, sensors, params, &BcdOptions::default())
            .with_context(|| format!("offline design for K = {k}, T0 = {duration} s"))?),
    }
}

fn family(scheme: Scheme) -> Option<Scheme> {
    match scheme {
        Scheme::Lb | Scheme::Plla => Some(scheme),
        Scheme::Plb | Scheme::Acs | Scheme::Ja | Scheme::Oja => Some(Scheme::Plb),
        Scheme::Static => None,
    }
}

fn policy(scheme: Scheme) -> Policy {
    match scheme {
        Scheme::Acs => Policy::Acs,
        Scheme::Ja => Policy::Ja,
        Scheme::Oja => Policy::Oja,
        _ => Policy::Plb,
    }
}

/// Runs every configured scheme on every realization.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let (los_model, fit) = cfg.resolve_los_model()?;
    let fit = fit.map(|(f, _)| f);

    let mut sensors = BTreeMap::new();
    let mut static_placements = BTreeMap::new();
    for &k in &cfg.sensor_counts {
        let s = layout_for(cfg, k)?;
        let params = channel_params(los_model, k);
        static_placements.insert(k, static_placement(&s, &params, cfg.mission.h_min, cfg.mission.h_max)?);
        sensors.insert(k, s);
    }

    let mut families: Vec<Scheme> = cfg.schemes.iter().filter_map(|s| family(*s)).collect();
    families.sort();
    families.dedup();
    let mut jobs: Vec<(Scheme, usize, f64)> = Vec::new();
    for &k in &cfg.sensor_counts {
        for &d in &cfg.durations {
            jobs.extend(families.iter().map(|&f| (f, k, d)));
        }
    }
    let offline: Vec<OfflineRecord> = jobs
        .par_iter()
        .map(|&(scheme, k, duration)| {
            let params = channel_params(los_model, k);
            let solution = offline_design(scheme, cfg, k, duration, &sensors[&k], &params)?;
            Ok(OfflineRecord { scheme, k, duration, solution })
        })
        .collect::<Result<_>>()?;

    let per_realization: Vec<(Vec<ResultRow>, Vec<TimingRow>)> = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| run_realization(cfg, r, los_model, &sensors, &static_placements, &offline))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (r, t) in per_realization {
        rows.extend(r);
        timings.extend(t);
    }
    rows.sort_by(|a, b| a.k.cmp(&b.k).then(a.duration.total_cmp(&b.duration)).then(a.scheme.cmp(&b.scheme)).then(a.realization.cmp(&b.realization)));
    timings.sort_by(|a, b| {
        a.k.cmp(&b.k)
            .then(a.duration.total_cmp(&b.duration))
            .then(a.scheme.cmp(&b.scheme))
            .then(a.realization.cmp(&b.realization))
            .then(a.segment.cmp(&b.segment))
    });
    Ok(Experiment { config: cfg.clone(), los_model, fit, sensors, static_placements, offline, rows, timings })
}

fn run_realization(
    cfg: &ExperimentConfig,
    r: usize,
    los_model: LosModel,
    sensors: &BTreeMap<usize, Vec<Point2>>,
    placements: &BTreeMap<usize, StaticPlacement>,
    offline: &[OfflineRecord],
) -> Result<(Vec<ResultRow>, Vec<TimingRow>)> {
    let city_seed = derive_seed(cfg.seed, r as u64);
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for &k in &cfg.sensor_counts {
        let s = &sensors[&k];
        let params = channel_params(los_model, k);
        let city = realize_city(cfg, city_seed, s)?;
        for &duration in &cfg.durations {
            for &scheme in &cfg.schemes {
                if scheme == Scheme::Static {
                    let rates = baseline_static(&placements[&k], s, &city, &params, duration)?;
                    let min_rate = rates.iter().cloned().fold(f64::INFINITY, f64::min);
                    rows.push(ResultRow {
                        scheme,
                        k,
                        duration,
                        realization: r,
                        city_seed,
                        min_rate,
                        offline_eta: placements[&k].expected_eta(),
                        offline_iterations: 0,
                        rates: join_rates(&rates),
                    });
                    continue;
                }
                let fam = family(scheme).expect("flying scheme");
                let rec = offline
                    .iter()
                    .find(|o| o.scheme == fam && o.k == k && o.duration == duration)
                    .expect("offline design computed for every flying family");
                let episode = fly(&rec.solution, &city, &params, policy(scheme), cfg, city_seed)?;
                if matches!(scheme, Scheme::Acs | Scheme::Ja | Scheme::Oja) {
                    timings.extend(episode.records.iter().map(|x| TimingRow {
                        scheme,
                        k,
                        duration,
                        realization: r,
                        segment: x.segment,
                        wall_time_s: x.wall_time_s,
                    }));
                }
                rows.push(ResultRow {
                    scheme,
                    k,
                    duration,
                    realization: r,
                    city_seed,
                    min_rate: episode.min_rate,
                    offline_eta: rec.solution.eta,
                    offline_iterations: rec.solution.iterations,
                    rates: join_rates(&episode.rates),
                });
            }
        }
    }
    Ok((rows, timings))
}

/// One episode of `policy` on the solution's path in `city`, with the
/// conservation checks applied.
pub fn fly(
    sol: &OfflineSolution,
    city: &CityRealization,
    params: &ChannelParams,
    policy: Policy,
    cfg: &ExperimentConfig,
    city_seed: u64,
) -> Result<Episode> {
    let segments = build_path(sol, params)?;
    let states = path_channel_states(&segments, &sol.sensors, city, params, cfg.sampling, derive_seed(city_seed, 17));
    let episode = run_episode(sol, &segments, &states, policy, params)?;
    episode.check_conservation(TIME_TOL)?;
    Ok(episode)
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

type Key = (usize, u64, Scheme);

fn key(row: &ResultRow) -> Key {
    (row.k, row.duration.to_bits(), row.scheme)
}

/// Mean and standard error of the min-rate per (scheme, K, duration).
pub fn aggregate(rows: &[ResultRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry(key(r)).or_default().push(r.min_rate);
    }
    let mut out: Vec<Aggregate> = groups
        .into_iter()
        .map(|((k, d, scheme), v)| {
            let (mean, stderr) = mean_and_stderr(&v);
            Aggregate { scheme, k, duration: f64::from_bits(d), n: v.len(), mean, stderr }
        })
        .collect();
    out.sort_by(|a, b| a.k.cmp(&b.k).then(a.duration.total_cmp(&b.duration)).then(a.scheme.cmp(&b.scheme)));
    out
}

fn paired(rows: &[ResultRow], better: Scheme, worse: Scheme, k: usize, duration: f64) -> Vec<f64> {
    let pick = |s: Scheme| -> BTreeMap<usize, f64> {
        rows.iter().filter(|r| r.scheme == s && r.k == k && r.duration == duration).map(|r| (r.realization, r.min_rate)).collect()
    };
    let (b, w) = (pick(better), pick(worse));
    b.iter().filter_map(|(i, x)| w.get(i).map(|y| x - y)).collect()
}

const CHAIN: [(Scheme, Scheme); 5] =
    [(Scheme::Oja, Scheme::Ja), (Scheme::Ja, Scheme::Acs), (Scheme::Acs, Scheme::Plb), (Scheme::Plb, Scheme::Plla), (Scheme::Plla, Scheme::Lb)];

/// Scheme-ordering checks on paired differences.
pub fn orderings(rows: &[ResultRow]) -> Vec<Ordering> {
    let mut cells: Vec<(usize, f64)> = rows.iter().map(|r| (r.k, r.duration)).collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    cells.dedup();
    let mut out = Vec::new();
    for (k, duration) in cells {
        let flying = [Scheme::Lb, Scheme::Plla, Scheme::Plb, Scheme::Acs, Scheme::Ja, Scheme::Oja];
        let pairs = CHAIN.iter().copied().chain(flying.iter().map(|&f| (f, Scheme::Static)));
        for (better, worse) in pairs {
            let d = paired(rows, better, worse, k, duration);
            if d.is_empty() {
                continue;
            }
            let (mean_gap, stderr) = mean_and_stderr(&d);
            let holds = if worse == Scheme::Static { mean_gap > 0.0 } else { mean_gap >= -2.0 * stderr };
            out.push(Ordering { better, worse, k, duration, n: d.len(), mean_gap, stderr, holds });
        }
    }
    out
}

/// Per-realization dominance counts along OJA ≥ JA ≥ ACS ≥ PLB.
pub fn dominance(rows: &[ResultRow], tol: f64) -> Vec<Dominance> {
    let mut cells: Vec<(usize, f64)> = rows.iter().map(|r| (r.k, r.duration)).collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    cells.dedup();
    let mut out = Vec::new();
    for (k, duration) in cells {
        for (better, worse) in &CHAIN[..3] {
            let d = paired(rows, *better, *worse, k, duration);
            if d.is_empty() {
                continue;
            }
            out.push(Dominance {
                better: *better,
                worse: *worse,
                k,
                duration,
                realizations: d.len(),
                violations: d.iter().filter(|g| **g < -tol).count(),
                max_shortfall: d.iter().map(|g| -g).fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    out
}

impl Experiment {
    pub fn summary(&self) -> Summary {
        Summary {
            config: self.config.clone(),
            los_model: self.los_model,
            fit_r_squared: self.fit.as_ref().map(|f| f.r_squared),
            sensors: self.sensors.clone(),
            static_placements: self.static_placements.clone(),
            offline: self
                .offline
                .iter()
                .map(|o| OfflineSummary {
                    scheme: o.scheme,
                    k: o.k,
                    duration: o.duration,
                    eta: o.solution.eta,
                    eta_fractional: o.solution.eta_fractional,
                    iterations: o.solution.iterations,
                    converged: o.solution.converged,
                    eta_trace: o.solution.eta_trace.clone(),
                })
                .collect(),
            aggregates: aggregate(&self.rows),
            orderings: orderings(&self.rows),
            dominance: dominance(&self.rows, TIME_TOL),
        }
    }

    /// Writes `results.csv`, `timings.csv`, `summary.json` and one JSON file
    /// per offline design under `offline/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("offline"))?;
        write_rows(&dir.join("results.csv"), &self.rows)?;
        let mut w = csv::Writer::from_path(dir.join("timings.csv"))?;
        for t in &self.timings {
            w.serialize(t)?;
        }
        w.flush()?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary())?)?;
        for o in &self.offline {
            let name = format!("{}_k{}_t{}.json", o.scheme, o.k, o.duration);
            std::fs::write(dir.join("offline").join(name), o.solution.to_json()?)?;
        }
        Ok(())
    }
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<ResultRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    for row in &rows {
        let rates = row.rates()?;
        let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        ensure!(min == row.min_rate, "row {} {}: min-rate is not the minimum of the per-sensor rates", row.scheme, row.realization);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ChannelSource;

    fn small(schemes: Vec<Scheme>, realizations: usize) -> ExperimentConfig {
        ExperimentConfig {
            channel: ChannelSource::UrbanPreset,
            realizations,
            schemes,
            durations: vec![10.6],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn single_plb_row_is_the_episode() {
        let cfg = small(vec![Scheme::Plb], 1);
        let exp = run_monte_carlo(&cfg).unwrap();
        assert_eq!(exp.rows.len(), 1);
        let row = &exp.rows[0];
        let params = channel_params(LosModel::URBAN, 4);
        let city = realize_city(&cfg, row.city_seed, &exp.sensors[&4]).unwrap();
        let ep = fly(&exp.offline[0].solution, &city, &params, Policy::Plb, &cfg, row.city_seed).unwrap();
        assert_eq!(row.min_rate, ep.min_rate);
        assert_eq!(row.rates().unwrap(), ep.rates);
    }

    #[test]
    fn rows_are_reproducible_and_aggregates_recompute() {
        let cfg = small(vec![Scheme::Plb, Scheme::Acs, Scheme::Static], 3);
        let a = run_monte_carlo(&cfg).unwrap();
        let b = run_monte_carlo(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_rows(&path, &a.rows).unwrap();
        let back = read_rows(&path).unwrap();
        assert_eq!(back, a.rows);
        for agg in aggregate(&back) {
            let v: Vec<f64> = back.iter().filter(|r| r.scheme == agg.scheme).map(|r| r.min_rate).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            assert!((agg.mean - mean).abs() <= 1e-12);
            assert_eq!(agg.n, 3);
        }
        for r in &back {
            let rates = r.rates().unwrap();
            assert_eq!(r.min_rate, rates.iter().cloned().fold(f64::INFINITY, f64::min));
        }
    }

    fn row(scheme: Scheme, realization: usize, min_rate: f64) -> ResultRow {
        ResultRow {
            scheme,
            k: 4,
            duration: 1.0,
            realization,
            city_seed: 0,
            min_rate,
            offline_eta: 0.0,
            offline_iterations: 0,
            rates: min_rate.to_string(),
        }
    }

    #[test]
    fn paired_orderings_and_dominance_counts() {
        let rows = vec![
            row(Scheme::Ja, 0, 1.0),
            row(Scheme::Ja, 1, 2.0),
            row(Scheme::Acs, 0, 1.1),
            row(Scheme::Acs, 1, 1.0),
            row(Scheme::Static, 0, 0.5),
            row(Scheme::Static, 1, 0.5),
        ];
        let o = orderings(&rows);
        let ja_acs = o.iter().find(|x| x.better == Scheme::Ja && x.worse == Scheme::Acs).unwrap();
        assert!((ja_acs.mean_gap - 0.45).abs() < 1e-12);
        assert!((ja_acs.stderr - 0.55).abs() < 1e-12);
        assert!(ja_acs.holds);
        assert!(o.iter().filter(|x| x.worse == Scheme::Static).all(|x| x.holds));
        let d = dominance(&rows, 1e-7);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].violations, 1);
        assert!((d[0].max_shortfall - 0.1).abs() < 1e-12);
    }
}
