//! Run configuration.
//!
//! The on-disk form is a flat list of dotted keys, one per line:
//!
//! ```text
//! vehicle.mass = 1000.0
//! mpc.horizon = 15
//! run.controller = "both"
//! ```
//!
//! which is also valid TOML, so it is parsed with the `toml` crate. Missing
//! keys keep their defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crowd::CrowdParams;
use crate::error::{Error, Result};
use crate::harness::ScenarioConfig;
use crate::pid::PidGains;
use crate::qp::QpSettings;
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Control and simulation step, s.
    pub dt: f64,
    /// Desired speed, m/s.
    pub v_r: f64,
    /// Minimum center-to-pedestrian gap, m.
    pub d_safe: f64,
    /// Extra lateral half-width of the corridor beyond the vehicle body, m.
    pub corridor_margin: f64,
    pub qp_max_iter: usize,
    pub feas_tol: f64,
    pub kkt_tol: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            dt: 0.05,
            v_r: 4.0,
            d_safe: 8.0,
            corridor_margin: 0.5,
            qp_max_iter: 500,
            feas_tol: 1e-8,
            kkt_tol: 1e-8,
        }
    }
}

impl MpcConfig {
    pub fn qp_settings(&self) -> QpSettings {
        QpSettings { max_iter: self.qp_max_iter, feas_tol: self.feas_tol, kkt_tol: self.kkt_tol }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::EmptyHorizon);
        }
        let positive = [("dt", self.dt), ("d_safe", self.d_safe), ("feas_tol", self.feas_tol), ("kkt_tol", self.kkt_tol)];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("mpc.{name} must be > 0")));
            }
        }
        if !(self.v_r >= 0.0) || !(self.corridor_margin >= 0.0) {
            return Err(Error::InvalidParameter("mpc.v_r and mpc.corridor_margin must be >= 0".into()));
        }
        if self.qp_max_iter == 0 {
            return Err(Error::InvalidParameter("mpc.qp_max_iter must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ControllerChoice {
    Mpc,
    Pid,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Episodes (pairs when `controller = both`) per density.
    pub episodes: usize,
    /// Crowd sizes to evaluate.
    pub densities: Vec<usize>,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub controller: ControllerChoice,
    pub out: PathBuf,
    pub trace: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            episodes: 200,
            densities: vec![30, 20, 10],
            seed: 7,
            workers: 0,
            controller: ControllerChoice::Both,
            out: PathBuf::from("results"),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub vehicle: VehicleParams,
    pub mpc: MpcConfig,
    pub pid: PidGains,
    pub crowd: CrowdParams,
    pub scenario: ScenarioConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.mpc.validate()?;
        self.pid.validate()?;
        self.crowd.validate()?;
        self.scenario.validate()?;
        crate::vehicle::discretize(&self.vehicle, self.mpc.dt)?;
        if self.run.episodes == 0 {
            return Err(Error::InvalidParameter("run.episodes must be >= 1".into()));
        }
        if self.run.densities.is_empty() {
            return Err(Error::InvalidParameter("run.densities must not be empty".into()));
        }
        Ok(())
    }

    pub fn from_str_flat(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config { path: origin.to_path_buf(), msg: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config { path: path.to_path_buf(), msg: e.to_string() })?;
        Self::from_str_flat(&text, path)
    }

    /// Flat dotted-key dump that [`RunConfig::load`] reads back unchanged.
    pub fn to_flat_string(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        flatten(&mut out, "", &value);
        out
    }
}

fn flatten(out: &mut String, prefix: &str, value: &serde_json::Value) {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(out, &key, v);
            }
        }
        // JSON scalars and arrays of them are valid TOML literals.
        other => {
            let _ = writeln!(out, "{prefix} = {other}");
        }
    }
}
