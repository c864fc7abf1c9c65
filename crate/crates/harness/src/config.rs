//! Experiment configuration as a single JSON document.

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use skyharvest::channel::{fit_logistic, ChannelParams, LogisticFit, LosModel};
use skyharvest::citygen::{sample_los_probability, CityParams, LosSampleTable};
use skyharvest::offline::MissionConfig;
use skyharvest::online::ChannelSampling;
use skyharvest::Point2;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Where the LoS model used by the offline design comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ChannelSource {
    /// The published urban coefficients.
    UrbanPreset,
    /// Regression on an elevation sweep over generated cities.
    FitFromCities { cities: usize, seed: u64 },
    Explicit { model: LosModel },
}

/// Everything of a mission except its duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionTemplate {
    pub q_start: Point2,
    pub z_start: f64,
    pub q_end: Point2,
    pub z_end: f64,
    pub v_xy_max: f64,
    pub v_z_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub eps_max: f64,
    pub eps_bcd: f64,
}

impl Default for MissionTemplate {
    fn default() -> Self {
        let m = MissionConfig::preset(10.0).expect("preset is valid");
        Self {
            q_start: m.q_start,
            z_start: m.z_start,
            q_end: m.q_end,
            z_end: m.z_end,
            v_xy_max: m.v_xy_max,
            v_z_max: m.v_z_max,
            h_min: m.h_min,
            h_max: m.h_max,
            eps_max: m.eps_max,
            eps_bcd: m.eps_bcd,
        }
    }
}

impl MissionTemplate {
    pub fn mission(&self, t0: f64) -> Result<MissionConfig> {
        Ok(MissionConfig::new(
            t0,
            self.q_start,
            self.z_start,
            self.q_end,
            self.z_end,
            self.v_xy_max,
            self.v_z_max,
            self.h_min,
            self.h_max,
            self.eps_max,
            self.eps_bcd,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// Offline design that assumes every link is LoS, flown literally.
    #[serde(rename = "LB")]
    Lb,
    /// Offline design at the minimum altitude, flown literally.
    #[serde(rename = "PLLA")]
    Plla,
    /// Full 3D offline design, flown literally.
    #[serde(rename = "PLB")]
    Plb,
    #[serde(rename = "ACS")]
    Acs,
    #[serde(rename = "JA")]
    Ja,
    #[serde(rename = "OJA")]
    Oja,
    /// Hovering at one point for the whole mission.
    #[serde(rename = "STATIC")]
    Static,
}

impl Scheme {
    pub const ALL: [Scheme; 7] =
        [Scheme::Lb, Scheme::Plla, Scheme::Plb, Scheme::Acs, Scheme::Ja, Scheme::Oja, Scheme::Static];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Lb => "LB",
            Scheme::Plla => "PLLA",
            Scheme::Plb => "PLB",
            Scheme::Acs => "ACS",
            Scheme::Ja => "JA",
            Scheme::Oja => "OJA",
            Scheme::Static => "STATIC",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match Scheme::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s)) {
            Some(p) => Ok(p),
            None => bail!("unknown scheme {s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Cities the episodes are flown in.
    pub city: CityParams,
    pub channel: ChannelSource,
    pub mission: MissionTemplate,
    /// Sensor counts to evaluate; one layout per count.
    pub sensor_counts: Vec<usize>,
    /// Fixed layout, used when its length matches a sensor count.
    pub sensor_positions: Option<Vec<Point2>>,
    pub realizations: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub durations: Vec<f64>,
    pub sampling: ChannelSampling,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            // The built area extends 90 m beyond the 300 m sensor square on
            // every side, so low rays towards the sensors cross buildings.
            city: CityParams { area_side: 480.0, origin: Point2::new(-90.0, -90.0), ..CityParams::default() },
            channel: ChannelSource::FitFromCities { cities: 200, seed: 7 },
            mission: MissionTemplate::default(),
            sensor_counts: vec![4],
            sensor_positions: None,
            realizations: 100,
            seed: 2020,
            schemes: Scheme::ALL.to_vec(),
            durations: vec![10.6, 13.6, 16.6, 19.6, 22.6, 25.6],
            sampling: ChannelSampling::RayTraced,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.city.validate()?;
        ensure!(self.realizations >= 1, "realization count must be at least 1");
        ensure!(!self.sensor_counts.is_empty() && self.sensor_counts.iter().all(|&k| k >= 1), "sensor counts must be positive");
        ensure!(!self.schemes.is_empty(), "scheme list is empty");
        ensure!(!self.durations.is_empty(), "duration sweep is empty");
        for &t0 in &self.durations {
            self.mission.mission(t0).with_context(|| format!("mission with T0 = {t0} s"))?;
        }
        if let ChannelSource::FitFromCities { cities, .. } = self.channel {
            ensure!(cities >= 1, "channel fit needs at least one city");
        }
        if let ChannelSource::Explicit { model } = &self.channel {
            model.validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// LoS model of the configured source, with the fit when one was run.
    pub fn resolve_los_model(&self) -> Result<(LosModel, Option<(LogisticFit, LosSampleTable)>)> {
        Ok(match &self.channel {
            ChannelSource::UrbanPreset => (LosModel::URBAN, None),
            ChannelSource::Explicit { model } => (*model, None),
            ChannelSource::FitFromCities { cities, seed } => {
                let table = sample_los_probability(&CityParams::sweep_default(), *cities, *seed)?;
                let fit = fit_logistic(&table)?;
                (fit.model, Some((fit, table)))
            }
        })
    }
}

/// Channel constants of the evaluation with `k` sensors.
pub fn channel_params(model: LosModel, k: usize) -> ChannelParams {
    ChannelParams::urban(k).with_los_model(model)
}
