//! Physical data model: thermal blocks, storage, frequency parameters, demand
//! and the aggregated EV fleet with its weekly calendar.

use std::path::PathBuf;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::degradation::DegradationParams;
use crate::error::{Error, FieldViolation, Result};
use crate::wind::{hours, WindModel};

/// A block of identical thermal units. Quantities are per unit; `units`
/// identical units share one integer commitment count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub name: String,
    #[serde(default = "one")]
    pub units: u32,
    /// GW per unit
    pub capacity: f64,
    /// GW per unit
    pub msg: f64,
    /// s, on machine base
    pub inertia_constant: f64,
    /// £/MWh
    pub marginal_cost: f64,
    /// £/h per committed unit
    pub no_load_cost: f64,
    /// £ per start
    pub startup_cost: f64,
    /// h
    #[serde(default)]
    pub min_up: f64,
    /// h
    #[serde(default)]
    pub min_down: f64,
    /// h
    #[serde(default)]
    pub commitment_lead: f64,
    #[serde(default)]
    pub must_run: bool,
    /// tCO2/MWh
    #[serde(default)]
    pub emission_factor: f64,
    /// Fraction of unit headroom offerable as PFR.
    #[serde(default)]
    pub max_pfr_share: f64,
}

fn one() -> u32 {
    1
}

impl GeneratorSpec {
    pub fn total_capacity(&self) -> f64 {
        self.capacity * self.units as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrService {
    Efr,
    Pfr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    pub name: String,
    /// GWh
    pub energy_capacity: f64,
    /// GW
    pub power_capacity: f64,
    /// One-way (dis)charge efficiency.
    pub efficiency: f64,
    pub service: FrService,
    /// Cap on frequency response offered (GW); defaults to the power rating.
    #[serde(default)]
    pub pfr_limit: Option<f64>,
    #[serde(default = "half")]
    pub initial_soc: f64,
}

fn half() -> f64 {
    0.5
}

impl StorageSpec {
    pub fn fr_limit(&self) -> f64 {
        self.pfr_limit.unwrap_or(2.0 * self.power_capacity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyParams {
    /// Hz
    pub f0: f64,
    /// Hz
    pub delta_f_max: f64,
    /// Hz/s
    pub rocof_max: f64,
    /// Largest infeed (GW).
    pub p_l: f64,
    /// EFR delivery time (s).
    pub t_e: f64,
    /// PFR delivery time (s).
    pub t_p: f64,
    /// Inertia of the lost infeed (GWs), removed from the post-loss system inertia.
    #[serde(default)]
    pub lost_infeed_inertia: f64,
}

impl FrequencyParams {
    /// Great Britain frequency criteria with a 1.8 GW largest infeed.
    pub fn gb() -> Self {
        Self {
            f0: 50.0,
            delta_f_max: 0.8,
            rocof_max: 1.0,
            p_l: 1.8,
            t_e: 1.0,
            t_p: 10.0,
            lost_infeed_inertia: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.f0,
            self.delta_f_max,
            self.rocof_max,
            self.p_l,
            self.t_e,
            self.t_p,
        ]
        .iter()
        .all(|v| *v > 0.0);
        if !all_positive {
            return Err(Error::InvalidInput(
                "frequency parameters must be positive".into(),
            ));
        }
        if self.t_e >= self.t_p {
            return Err(Error::InvalidInput(
                "EFR must be faster than PFR (t_e < t_p)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargingRegime {
    Unmanaged,
    Smart,
    V2g,
}

impl std::fmt::Display for ChargingRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Unmanaged => "unmanaged",
            Self::Smart => "smart",
            Self::V2g => "v2g",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvFleetSpec {
    pub n_ev: u64,
    pub battery_kwh: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub charger_kw: f64,
    pub efficiency: f64,
    pub regime: ChargingRegime,
    #[serde(with = "hhmm")]
    pub t_out: NaiveTime,
    #[serde(with = "hhmm")]
    pub t_in: NaiveTime,
    pub c_out: f64,
    pub c_in: f64,
    /// Grid connection time for unmanaged chargers; charging starts immediately.
    #[serde(with = "hhmm")]
    pub unmanaged_t_out: NaiveTime,
    /// When false the fleet never offers frequency response.
    #[serde(default = "yes")]
    pub fr_enabled: bool,
    /// SOC at the start of a simulation; defaults to `c_out`.
    #[serde(default)]
    pub initial_soc: Option<f64>,
}

fn yes() -> bool {
    true
}

impl EvFleetSpec {
    /// 40 kWh / 10 kW vehicles disconnected 08:00-16:00 on workdays.
    pub fn reference(n_ev: u64, regime: ChargingRegime) -> Self {
        Self {
            n_ev,
            battery_kwh: 40.0,
            soc_min: 0.2,
            soc_max: 0.9,
            charger_kw: 10.0,
            efficiency: 0.96,
            regime,
            t_out: NaiveTime::from_hms_opt(8, 0, 0).unwrap(),
            t_in: NaiveTime::from_hms_opt(16, 0, 0).unwrap(),
            c_out: 0.9,
            c_in: 0.625,
            unmanaged_t_out: NaiveTime::from_hms_opt(21, 0, 0).unwrap(),
            fr_enabled: true,
            initial_soc: None,
        }
    }

    /// Time of day at which the fleet reconnects after a workday.
    pub fn connect_time(&self) -> NaiveTime {
        match self.regime {
            ChargingRegime::Unmanaged => self.unmanaged_t_out,
            _ => self.t_in,
        }
    }

    pub fn start_soc(&self) -> f64 {
        self.initial_soc.unwrap_or(self.c_out)
    }

    pub fn offers_fr(&self) -> bool {
        self.fr_enabled && self.regime != ChargingRegime::Unmanaged && self.n_ev > 0
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.soc_min
            && self.soc_min <= self.c_in
            && self.c_in <= self.c_out
            && self.c_out <= self.soc_max
            && self.soc_max <= 1.0;
        if !ordered {
            return Err(Error::InvalidInput(
                "fleet SOC levels must satisfy 0 <= soc_min <= c_in <= c_out <= soc_max <= 1"
                    .into(),
            ));
        }
        if self.t_out >= self.t_in {
            return Err(Error::InvalidInput(
                "t_out must precede t_in within a day".into(),
            ));
        }
        if self.regime == ChargingRegime::Unmanaged && self.unmanaged_t_out < self.t_in {
            return Err(Error::InvalidInput(
                "unmanaged connection time must not precede t_in".into(),
            ));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::InvalidInput(
                "fleet efficiency must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// The fleet seen as one battery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateBattery {
    /// GWh
    pub energy: f64,
    /// GW
    pub power: f64,
    pub soc_min: f64,
    pub soc_max: f64,
}

pub fn aggregate_fleet(fleet: &EvFleetSpec) -> AggregateBattery {
    let n = fleet.n_ev as f64;
    AggregateBattery {
        energy: n * fleet.battery_kwh * 1e-6,
        power: n * fleet.charger_kw * 1e-6,
        soc_min: fleet.soc_min,
        soc_max: fleet.soc_max,
    }
}

/// Fleet-wide energy consumed by one workday of driving (GWh).
pub fn driving_energy(fleet: &EvFleetSpec) -> f64 {
    (fleet.c_out - fleet.c_in) * fleet.battery_kwh * fleet.n_ev as f64 * 1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FleetWindow {
    Connected,
    Driving,
    DepartureInstant,
    ArrivalInstant,
}

impl FleetWindow {
    /// True while the vehicles are away from the depot.
    pub fn is_disconnected(self) -> bool {
        matches!(self, Self::Driving | Self::DepartureInstant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calendar {
    #[serde(default = "default_weekend")]
    pub weekend: Vec<Weekday>,
    #[serde(default)]
    pub holidays: Vec<NaiveDate>,
}

fn default_weekend() -> Vec<Weekday> {
    vec![Weekday::Sat, Weekday::Sun]
}

impl Default for Calendar {
    fn default() -> Self {
        Self {
            weekend: default_weekend(),
            holidays: Vec::new(),
        }
    }
}

impl Calendar {
    pub fn is_workday(&self, date: NaiveDate) -> bool {
        !self.weekend.contains(&date.weekday()) && !self.holidays.contains(&date)
    }
}

/// Availability of the fleet at an absolute time. Weekend hours are always
/// connected; unmanaged fleets reconnect at `unmanaged_t_out`.
pub fn fleet_window(fleet: &EvFleetSpec, calendar: &Calendar, t_ab: NaiveDateTime) -> FleetWindow {
    if !calendar.is_workday(t_ab.date()) {
        return FleetWindow::Connected;
    }
    let tod = t_ab.time();
    let back = fleet.connect_time();
    if tod == fleet.t_out {
        FleetWindow::DepartureInstant
    } else if fleet.t_out < tod && tod < back {
        FleetWindow::Driving
    } else if tod == back {
        FleetWindow::ArrivalInstant
    } else {
        FleetWindow::Connected
    }
}

/// SOC assumed for accounting while the fleet is on the road: `c_out` for the
/// first half of the working day, `c_in` afterwards.
pub fn on_road_soc(fleet: &EvFleetSpec, t_ab: NaiveDateTime) -> f64 {
    let secs = |t: NaiveTime| t.num_seconds_from_midnight() as f64;
    let mid = 0.5 * (secs(fleet.t_out) + secs(fleet.t_in));
    if secs(t_ab.time()) < mid {
        fleet.c_out
    } else {
        fleet.c_in
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DemandProfile {
    /// Two-peak daily shape scaled onto `[min_gw, max_gw]`, with weekend
    /// demand reduced by `weekend_factor`.
    Synthetic {
        min_gw: f64,
        max_gw: f64,
        #[serde(default = "weekend_factor")]
        weekend_factor: f64,
    },
    /// Half-hourly CSV with columns `time_iso8601,demand_gw`.
    Csv { path: PathBuf },
}

fn weekend_factor() -> f64 {
    0.92
}

/// Half-hourly demand, looked up cyclically by elapsed time since `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandTrace {
    pub start: NaiveDateTime,
    pub step_h: f64,
    pub values: Vec<f64>,
}

impl DemandTrace {
    pub fn at(&self, t: NaiveDateTime) -> f64 {
        let elapsed = (t - self.start).num_seconds() as f64 / 3600.0;
        let idx = (elapsed / self.step_h).floor() as i64;
        let n = self.values.len() as i64;
        self.values[idx.rem_euclid(n) as usize]
    }
}

fn gauss_wrap(h: f64, centre: f64, width: f64) -> f64 {
    let mut d = (h - centre).abs();
    if d > 12.0 {
        d = 24.0 - d;
    }
    (-(d / width).powi(2)).exp()
}

fn daily_shape(hour: f64) -> f64 {
    0.55 * gauss_wrap(hour, 8.5, 3.0)
        + 1.0 * gauss_wrap(hour, 18.0, 2.5)
        + 0.45 * gauss_wrap(hour, 13.0, 4.0)
}

impl DemandProfile {
    /// Materializes a trace of `steps` half-hour values starting at `start`.
    pub fn trace(
        &self,
        start: NaiveDateTime,
        steps: usize,
        calendar: &Calendar,
    ) -> Result<DemandTrace> {
        match self {
            Self::Synthetic {
                min_gw,
                max_gw,
                weekend_factor,
            } => {
                let samples: Vec<f64> = (0..48).map(|i| daily_shape(i as f64 * 0.5)).collect();
                let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let values = (0..steps)
                    .map(|i| {
                        let t = start + hours(0.5 * i as f64);
                        let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
                        let x = (daily_shape(hour) - lo) / (hi - lo);
                        let d = min_gw + (max_gw - min_gw) * x;
                        if calendar.is_workday(t.date()) {
                            d
                        } else {
                            min_gw + (d - min_gw) * weekend_factor
                        }
                    })
                    .collect();
                Ok(DemandTrace {
                    start,
                    step_h: 0.5,
                    values,
                })
            }
            Self::Csv { path } => {
                let mut reader = csv::Reader::from_path(path)?;
                let mut values = Vec::new();
                let mut first: Option<NaiveDateTime> = None;
                for record in reader.records() {
                    let record = record?;
                    let t = NaiveDateTime::parse_from_str(&record[0], "%Y-%m-%dT%H:%M:%S")
                        .map_err(|e| Error::Config(format!("bad demand timestamp: {e}")))?;
                    first.get_or_insert(t);
                    let v: f64 = record[1]
                        .trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("bad demand value: {e}")))?;
                    values.push(v);
                }
                if values.is_empty() {
                    return Err(Error::Config("demand CSV is empty".into()));
                }
                Ok(DemandTrace {
                    start: first.unwrap_or(start),
                    step_h: 0.5,
                    values,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReserveSpec {
    #[serde(default)]
    pub enabled: bool,
    /// GW added to the largest-infeed headroom requirement.
    #[serde(default)]
    pub wind_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub generators: Vec<GeneratorSpec>,
    #[serde(default)]
    pub storages: Vec<StorageSpec>,
    pub fleet: EvFleetSpec,
    pub freq: FrequencyParams,
    pub demand: DemandProfile,
    pub wind: WindModel,
    /// £/MWh
    pub voll: f64,
    #[serde(default)]
    pub calendar: Calendar,
    #[serde(default)]
    pub reserve: ReserveSpec,
    #[serde(default)]
    pub degradation: DegradationParams,
}

impl SystemSpec {
    pub fn total_thermal_capacity(&self) -> f64 {
        self.generators
            .iter()
            .map(GeneratorSpec::total_capacity)
            .sum()
    }

    /// Field-by-field schema check.
    pub fn violations(&self) -> Vec<FieldViolation> {
        let mut out = Vec::new();
        let mut bad = |field: String, message: &str| {
            out.push(FieldViolation {
                field,
                message: message.to_string(),
            })
        };
        if self.generators.is_empty() {
            bad(
                "generators".into(),
                "at least one thermal block is required",
            );
        }
        for (i, g) in self.generators.iter().enumerate() {
            let f = |name: &str| format!("generators[{i}].{name}");
            if !(g.capacity > 0.0) {
                bad(f("capacity"), "must be positive");
            }
            if !(g.msg >= 0.0 && g.msg <= g.capacity) {
                bad(f("msg"), "must satisfy 0 <= msg <= capacity");
            }
            if !(g.inertia_constant >= 0.0) {
                bad(f("inertia_constant"), "must be nonnegative");
            }
            if !(g.min_up >= 0.0) {
                bad(f("min_up"), "must be nonnegative");
            }
            if !(g.min_down >= 0.0) {
                bad(f("min_down"), "must be nonnegative");
            }
            if !(g.commitment_lead >= 0.0) {
                bad(f("commitment_lead"), "must be nonnegative");
            }
            if !(0.0..=1.0).contains(&g.max_pfr_share) {
                bad(f("max_pfr_share"), "must lie in [0, 1]");
            }
            if g.units == 0 {
                bad(f("units"), "must be at least 1");
            }
        }
        for (i, s) in self.storages.iter().enumerate() {
            let f = |name: &str| format!("storages[{i}].{name}");
            if !(s.efficiency > 0.0 && s.efficiency <= 1.0) {
                bad(f("efficiency"), "must lie in (0, 1]");
            }
            if !(s.power_capacity > 0.0) {
                bad(f("power_capacity"), "must be positive");
            }
            if !(s.energy_capacity > 0.0) {
                bad(f("energy_capacity"), "must be positive");
            }
            if !(0.0..=1.0).contains(&s.initial_soc) {
                bad(f("initial_soc"), "must lie in [0, 1]");
            }
        }
        if let Err(e) = self.fleet.validate() {
            bad("fleet".into(), &e.to_string());
        }
        if let Err(e) = self.freq.validate() {
            bad("freq".into(), &e.to_string());
        }
        if let Err(e) = self.wind.validate() {
            bad("wind".into(), &e.to_string());
        }
        if !(self.voll > 0.0) {
            bad("voll".into(), "must be positive");
        }
        if let DemandProfile::Synthetic { min_gw, max_gw, .. } = &self.demand {
            if !(*min_gw > 0.0 && max_gw >= min_gw) {
                bad(
                    "demand".into(),
                    "synthetic demand needs 0 < min_gw <= max_gw",
                );
            }
        }
        if let Err(e) = self
            .degradation
            .validate(self.fleet.soc_min, self.fleet.soc_max)
        {
            bad("degradation".into(), &e.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(v))
        }
    }
}

mod hhmm {
    use chrono::NaiveTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format("%H:%M").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveTime, D::Error> {
        let raw = String::deserialize(d)?;
        NaiveTime::parse_from_str(&raw, "%H:%M")
            .or_else(|_| NaiveTime::parse_from_str(&raw, "%H:%M:%S"))
            .map_err(serde::de::Error::custom)
    }
}
