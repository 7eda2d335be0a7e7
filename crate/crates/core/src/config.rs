//! TOML run configuration with `include` support.
//!
//! A file may list other files under a top-level `include` key. Included
//! files are merged first, in order, and the including file is merged on
//! top; tables merge key by key and everything else is replaced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{Error, Result};
use crate::rolling::SimOptions;
use crate::system::{ChargingRegime, DemandProfile, SystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(default = "week")]
    pub days: usize,
    #[serde(default = "one_seed")]
    pub seeds: Vec<u64>,
    #[serde(flatten)]
    pub options: SimOptions,
}

fn week() -> usize {
    7
}
fn one_seed() -> Vec<u64> {
    vec![1]
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            days: week(),
            seeds: one_seed(),
            options: SimOptions::default(),
        }
    }
}

/// Stationary battery size for a sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryCell {
    pub power_gw: f64,
    pub energy_gwh: f64,
}

/// Axes of a case-study sweep. Empty axes keep the base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub ev_counts: Vec<u64>,
    #[serde(default)]
    pub regimes: Vec<ChargingRegime>,
    /// GW of installed wind.
    #[serde(default)]
    pub wind_capacities: Vec<f64>,
    /// Replaces the first stationary battery (adds one if there is none).
    #[serde(default)]
    pub batteries: Vec<BatteryCell>,
    /// `(t_e, t_p)` pairs in seconds.
    #[serde(default)]
    pub fr_times: Vec<(f64, f64)>,
    #[serde(default)]
    pub penalize_degradation: Vec<bool>,
    #[serde(default)]
    pub ev_fr_enabled: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstgConfig {
    /// s, fleet-average inertia constant used to convert inertia to generation.
    #[serde(default = "avg_h")]
    pub avg_inertia_constant: f64,
    /// MSG as a fraction of rated capacity.
    #[serde(default = "msg_fraction")]
    pub msg_fraction: f64,
    /// s
    #[serde(default = "delivery_times")]
    pub delivery_times: Vec<f64>,
    /// GW
    #[serde(default)]
    pub fr_min: Option<f64>,
    /// GW
    #[serde(default)]
    pub fr_max: Option<f64>,
    #[serde(default = "points")]
    pub points: usize,
}

fn avg_h() -> f64 {
    4.5
}
fn msg_fraction() -> f64 {
    0.5
}
fn delivery_times() -> Vec<f64> {
    vec![1.0, 10.0]
}
fn points() -> usize {
    50
}

impl Default for MstgConfig {
    fn default() -> Self {
        Self {
            avg_inertia_constant: avg_h(),
            msg_fraction: msg_fraction(),
            delivery_times: delivery_times(),
            fr_min: None,
            fr_max: None,
            points: points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub mstg: MstgConfig,
}

/// A loaded configuration with the merged text it was parsed from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Merged TOML, used for hashing.
    pub merged_text: String,
    pub path: PathBuf,
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn load_value(path: &Path, depth: usize) -> Result<Value> {
    if depth > 16 {
        return Err(Error::Config(format!(
            "include depth exceeded at {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let includes = match value.as_table_mut().and_then(|t| t.remove("include")) {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(a)) => a
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                _ => Err(Error::Config("include entries must be strings".into())),
            })
            .collect::<Result<_>>()?,
        Some(_) => {
            return Err(Error::Config(
                "include must be a string or a list of strings".into(),
            ))
        }
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut merged = Value::Table(Default::default());
    for inc in includes {
        merge(&mut merged, load_value(&dir.join(inc), depth + 1)?);
    }
    merge(&mut merged, value);
    Ok(merged)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads, merges includes, resolves relative data paths against the
    /// file's directory, and validates the system.
    pub fn load(path: impl AsRef<Path>) -> Result<LoadedConfig> {
        let path = path.as_ref();
        let merged = load_value(path, 0)?;
        let merged_text = toml::to_string(&merged).map_err(|e| Error::Config(e.to_string()))?;
        let mut config: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
        if let DemandProfile::Csv { path: p } = &mut config.system.demand {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        config.system.validate()?;
        Ok(LoadedConfig {
            config,
            merged_text,
            path: path.to_path_buf(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_overrides_leaves() {
        let mut a: Value = toml::from_str("[x]\na = 1\nb = 2\n[y]\nc = 3").unwrap();
        let b: Value = toml::from_str("[x]\nb = 5\nd = 6").unwrap();
        merge(&mut a, b);
        assert_eq!(a["x"]["a"].as_integer(), Some(1));
        assert_eq!(a["x"]["b"].as_integer(), Some(5));
        assert_eq!(a["x"]["d"].as_integer(), Some(6));
        assert_eq!(a["y"]["c"].as_integer(), Some(3));
    }
}
