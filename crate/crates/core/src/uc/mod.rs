//! Stochastic unit commitment over a scenario tree.

mod build;
mod solve;

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

pub use build::{build_problem, EvVars, NodeVars, StorageVars, UcProblem};
pub use solve::{check_solution, fr_capability, solve, CutPool, SolutionCheck, UcSolution};

use crate::system::SystemSpec;

/// Constraint families. Every row and cone of a problem carries one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintTag {
    /// Post-loss inertia definition and the RoCoF floor.
    Eq2Rocof,
    /// FR totals and the steady-state requirement.
    Eq3SteadyState,
    /// Nadir requirement, as a cone or as linear cuts.
    Eq4Nadir,
    Balance,
    ThermalLogic,
    StorageDynamics,
    EvWindow,
    EvDeparture,
    FrHeadroom,
    DegradationCuts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NadirMode {
    Conic,
    #[default]
    Cuts,
}

impl std::str::FromStr for NadirMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conic" => Ok(Self::Conic),
            "cuts" => Ok(Self::Cuts),
            other => Err(format!(
                "unknown nadir mode `{other}` (expected conic or cuts)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcOptions {
    /// Adds the fleet degradation cost to the objective.
    #[serde(default)]
    pub penalize_degradation: bool,
    /// Overrides `(t_e, t_p)` from the frequency parameters.
    #[serde(default)]
    pub fr_times: Option<(f64, f64)>,
    #[serde(default)]
    pub nadir_mode: NadirMode,
    /// When false, the RoCoF, steady-state and nadir rows are omitted.
    #[serde(default = "yes")]
    pub frequency_constraints: bool,
    /// Commitment counts are integer up to this depth and continuous beyond.
    #[serde(default)]
    pub integer_depth: Option<usize>,
    /// Initial tangent cuts in cuts mode.
    #[serde(default = "fan_size")]
    pub initial_cuts: usize,
    #[serde(default = "max_cut_rounds")]
    pub max_cut_rounds: usize,
    /// Relative nadir violation accepted by the cut loop.
    #[serde(default = "cut_tolerance")]
    pub cut_tolerance: f64,
}

fn yes() -> bool {
    true
}
fn fan_size() -> usize {
    9
}
fn max_cut_rounds() -> usize {
    20
}
fn cut_tolerance() -> f64 {
    1e-6
}

impl Default for UcOptions {
    fn default() -> Self {
        Self {
            penalize_degradation: false,
            fr_times: None,
            nadir_mode: NadirMode::Cuts,
            frequency_constraints: true,
            integer_depth: None,
            initial_cuts: fan_size(),
            max_cut_rounds: max_cut_rounds(),
            cut_tolerance: cut_tolerance(),
        }
    }
}

/// Commitment history of one thermal block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitHistory {
    pub online: u32,
    /// Start-ups per past step, most recent last. Missing steps count as zero.
    pub startups: Vec<u32>,
    pub shutdowns: Vec<u32>,
    /// Output over the last step (GW).
    pub output: f64,
    /// Commitments already fixed for future times by the lead-time rule.
    #[serde(default)]
    pub planned: BTreeMap<NaiveDateTime, u32>,
}

impl UnitHistory {
    /// Steps since the last start-up or shutdown; `None` if there is none on record.
    pub fn time_in_state(&self) -> Option<usize> {
        let last = |h: &[u32]| h.iter().rposition(|&x| x > 0).map(|i| h.len() - 1 - i);
        match (last(&self.startups), last(&self.shutdowns)) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub time: NaiveDateTime,
    pub units: Vec<UnitHistory>,
    pub storage_soc: Vec<f64>,
    pub ev_soc: f64,
    /// Wind available now (GW).
    pub wind: f64,
}

impl SystemState {
    /// All units online with no recent transitions; storage at its configured
    /// SOC and the fleet at its start SOC.
    pub fn initial(spec: &SystemSpec, time: NaiveDateTime, wind: f64) -> Self {
        Self {
            time,
            units: spec
                .generators
                .iter()
                .map(|g| UnitHistory {
                    online: g.units,
                    startups: Vec::new(),
                    shutdowns: Vec::new(),
                    output: 0.0,
                    planned: BTreeMap::new(),
                })
                .collect(),
            storage_soc: spec.storages.iter().map(|s| s.initial_soc).collect(),
            ev_soc: spec.fleet.start_soc(),
            wind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StorageDecision {
    /// GW
    pub charge: f64,
    /// GW
    pub discharge: f64,
    /// FR scheduled (GW); EFR or PFR depending on the device.
    pub fr: f64,
    /// SOC at the start of the node.
    pub soc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDecision {
    pub node: usize,
    pub t_ab: NaiveDateTime,
    pub pi: f64,
    pub delta_tau: f64,
    /// Committed units per block; fractional only where integrality is relaxed.
    pub commitment: Vec<f64>,
    pub output: Vec<f64>,
    pub pfr: Vec<f64>,
    pub startups: Vec<f64>,
    pub shutdowns: Vec<f64>,
    pub storage: Vec<StorageDecision>,
    pub ev: StorageDecision,
    pub ev_connected: bool,
    pub load_shed: f64,
    pub demand: f64,
    pub wind_available: f64,
    pub wind_used: f64,
    pub wind_curtailed: f64,
    /// Post-loss inertia (GWs).
    pub inertia: f64,
    pub r_e: f64,
    pub r_p: f64,
    /// Fleet fade rate (%/h) at the node's SOC.
    pub fade: f64,
}

impl NodeDecision {
    pub fn fr_state(&self) -> crate::frequency::FrState {
        crate::frequency::FrState {
            h: self.inertia,
            r_e: self.r_e,
            r_p: self.r_p,
        }
    }

    /// Generation minus consumption at the node (GW); zero when balanced.
    pub fn balance_residual(&self) -> f64 {
        let supply: f64 = self.output.iter().sum::<f64>()
            + self.wind_used
            + self.storage.iter().map(|s| s.discharge).sum::<f64>()
            + self.ev.discharge
            + self.load_shed;
        let use_: f64 =
            self.demand + self.storage.iter().map(|s| s.charge).sum::<f64>() + self.ev.charge;
        supply - use_
    }
}
