//! Case-study sweeps: variants of a base configuration, each compared with a
//! zero-EV benchmark sharing its system changes and wind seed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{BatteryCell, RunConfig};
use crate::error::{Error, Result};
use crate::rolling::{
    emissions_delta_per_ev, net_value_per_ev, value_per_ev, LedgerTotals, SimOptions,
    SimulationLedger,
};
use crate::system::{ChargingRegime, FrService, StorageSpec, SystemSpec};

/// One variant of the base system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub n_ev: u64,
    pub regime: ChargingRegime,
    /// GW; `None` keeps the base value.
    pub wind_capacity: Option<f64>,
    pub battery: Option<BatteryCell>,
    /// `(t_e, t_p)` in seconds.
    pub fr_times: Option<(f64, f64)>,
    pub penalize_degradation: bool,
    pub ev_fr_enabled: bool,
}

impl Case {
    /// The case as configured, without sweep changes.
    pub fn base(config: &RunConfig) -> Self {
        Self {
            n_ev: config.system.fleet.n_ev,
            regime: config.system.fleet.regime,
            wind_capacity: None,
            battery: None,
            fr_times: config.simulation.options.uc.fr_times,
            penalize_degradation: config.simulation.options.uc.penalize_degradation,
            ev_fr_enabled: config.system.fleet.fr_enabled,
        }
    }

    /// Zero-EV case with the same system changes. Fleet-only settings are
    /// normalized so that equal benchmarks compare equal.
    pub fn benchmark(&self) -> Self {
        Self {
            n_ev: 0,
            regime: ChargingRegime::Smart,
            penalize_degradation: false,
            ev_fr_enabled: true,
            ..self.clone()
        }
    }

    pub fn is_benchmark(&self) -> bool {
        *self == self.benchmark()
    }

    pub fn label(&self) -> String {
        let mut s = if self.n_ev == 0 {
            "no_ev".to_string()
        } else {
            format!("{}_{}", self.regime, self.n_ev)
        };
        if let Some(w) = self.wind_capacity {
            s.push_str(&format!("_wind{w}"));
        }
        if let Some(b) = self.battery {
            s.push_str(&format!("_bess{}x{}", b.power_gw, b.energy_gwh));
        }
        if let Some((te, tp)) = self.fr_times {
            s.push_str(&format!("_te{te}_tp{tp}"));
        }
        if self.n_ev > 0 && self.penalize_degradation {
            s.push_str("_pen");
        }
        if self.n_ev > 0 && !self.ev_fr_enabled {
            s.push_str("_nofr");
        }
        s
    }

    /// System and options for this case.
    pub fn apply(&self, spec: &SystemSpec, options: &SimOptions) -> (SystemSpec, SimOptions) {
        let mut spec = spec.clone();
        let mut options = options.clone();
        spec.fleet.n_ev = self.n_ev;
        spec.fleet.regime = self.regime;
        spec.fleet.fr_enabled = self.ev_fr_enabled;
        if let Some(w) = self.wind_capacity {
            spec.wind.installed_capacity = w;
        }
        if let Some(b) = self.battery {
            match spec
                .storages
                .iter_mut()
                .find(|s| s.service == FrService::Efr)
            {
                Some(s) => {
                    s.power_capacity = b.power_gw;
                    s.energy_capacity = b.energy_gwh;
                }
                None => spec.storages.push(StorageSpec {
                    name: "battery".into(),
                    energy_capacity: b.energy_gwh,
                    power_capacity: b.power_gw,
                    efficiency: 0.95,
                    service: FrService::Efr,
                    pfr_limit: None,
                    initial_soc: 0.5,
                }),
            }
        }
        options.uc.fr_times = self.fr_times;
        options.uc.penalize_degradation = self.penalize_degradation && self.n_ev > 0;
        (spec, options)
    }
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// Cartesian product of the sweep axes, in a fixed order.
pub fn expand(config: &RunConfig) -> Vec<Case> {
    let base = Case::base(config);
    let sw = &config.sweep;
    let mut out = Vec::new();
    for &n_ev in &axis(&sw.ev_counts, base.n_ev) {
        for &regime in &axis(&sw.regimes, base.regime) {
            for &wind in &axis(
                &sw.wind_capacities
                    .iter()
                    .map(|&w| Some(w))
                    .collect::<Vec<_>>(),
                None,
            ) {
                for &battery in &axis(
                    &sw.batteries.iter().map(|&b| Some(b)).collect::<Vec<_>>(),
                    None,
                ) {
                    for &fr in &axis(
                        &sw.fr_times.iter().map(|&t| Some(t)).collect::<Vec<_>>(),
                        base.fr_times,
                    ) {
                        for &pen in &axis(&sw.penalize_degradation, base.penalize_degradation) {
                            for &evfr in &axis(&sw.ev_fr_enabled, base.ev_fr_enabled) {
                                let case = Case {
                                    n_ev,
                                    regime,
                                    wind_capacity: wind,
                                    battery,
                                    fr_times: fr,
                                    penalize_degradation: pen,
                                    ev_fr_enabled: evfr,
                                };
                                let case = if n_ev == 0 { case.benchmark() } else { case };
                                if !out.contains(&case) {
                                    out.push(case);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `cases` followed by their benchmarks that are not already listed.
pub fn with_benchmarks(cases: &[Case]) -> Vec<Case> {
    let mut out = cases.to_vec();
    for c in cases {
        let b = c.benchmark();
        if !out.contains(&b) {
            out.push(b);
        }
    }
    out
}

/// Distinct runs needed for `cases`: every case and its benchmark, per seed.
pub fn required_runs(cases: &[Case], seeds: &[u64]) -> Vec<(Case, u64)> {
    let mut runs = Vec::new();
    for c in cases {
        for &seed in seeds {
            for k in [c.benchmark(), c.clone()] {
                if !runs.contains(&(k.clone(), seed)) {
                    runs.push((k, seed));
                }
            }
        }
    }
    runs
}

/// Per-case, per-seed result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub label: String,
    pub case: Case,
    pub seed: u64,
    pub totals: LedgerTotals,
    /// £/EV/yr; `None` for benchmarks or when a run failed.
    pub value_per_ev: Option<f64>,
    pub net_value_per_ev: Option<f64>,
    /// tCO2/EV/yr
    pub emissions_delta_per_ev: Option<f64>,
    /// GWh over the run.
    pub curtailment_gwh: f64,
    pub error: Option<String>,
}

/// Outcome of one simulation: the ledger, or the error that prevented it.
pub type RunOutcome = std::result::Result<SimulationLedger, String>;

/// Combines run outcomes into per-case results.
pub fn evaluate(
    cases: &[Case],
    seeds: &[u64],
    runs: &[((Case, u64), RunOutcome)],
) -> Vec<CaseResult> {
    let find = |c: &Case, s: u64| {
        runs.iter()
            .find(|((k, t), _)| k == c && *t == s)
            .map(|(_, r)| r)
    };
    let mut out = Vec::new();
    for c in cases {
        for &seed in seeds {
            let own = find(c, seed);
            let bench = find(&c.benchmark(), seed);
            let mut error = match own {
                Some(Ok(l)) => l.aborted.clone(),
                Some(Err(e)) => Some(e.clone()),
                None => Some("run missing".into()),
            };
            let (mut v, mut nv, mut ed) = (None, None, None);
            if let (Some(Ok(l)), Some(Ok(b))) = (own, bench) {
                if c.n_ev > 0 && l.aborted.is_none() && b.aborted.is_none() {
                    match (
                        value_per_ev(l, b, c.n_ev),
                        net_value_per_ev(l, b, c.n_ev),
                        emissions_delta_per_ev(l, b, c.n_ev),
                    ) {
                        (Ok(a), Ok(n), Ok(e)) => {
                            v = Some(a);
                            nv = Some(n);
                            ed = Some(e);
                        }
                        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
                            error = Some(e.to_string())
                        }
                    }
                } else if c.n_ev > 0 && error.is_none() {
                    error = Some("benchmark run failed".into());
                }
            }
            let totals = match own {
                Some(Ok(l)) => l.totals.clone(),
                _ => LedgerTotals::default(),
            };
            out.push(CaseResult {
                label: c.label(),
                case: c.clone(),
                seed,
                curtailment_gwh: totals.wind_curtailed_gwh,
                totals,
                value_per_ev: v,
                net_value_per_ev: nv,
                emissions_delta_per_ev: ed,
                error,
            });
        }
    }
    out
}

/// Mean and standard error over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Zero with a single seed.
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std_error, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub label: String,
    pub case: Case,
    pub system_cost: Option<Estimate>,
    pub degradation_cost: Option<Estimate>,
    pub net_cost: Option<Estimate>,
    pub curtailment_gwh: Option<Estimate>,
    pub co2_t: Option<Estimate>,
    pub value_per_ev: Option<Estimate>,
    pub net_value_per_ev: Option<Estimate>,
    pub emissions_delta_per_ev: Option<Estimate>,
    pub failed_seeds: Vec<u64>,
}

/// Aggregates results over seeds; failed seeds are excluded and listed.
pub fn summarize(results: &[CaseResult]) -> Vec<CaseSummary> {
    let mut groups: BTreeMap<usize, Vec<&CaseResult>> = BTreeMap::new();
    let mut order: Vec<&Case> = Vec::new();
    for r in results {
        let i = match order.iter().position(|c| **c == r.case) {
            Some(i) => i,
            None => {
                order.push(&r.case);
                order.len() - 1
            }
        };
        groups.entry(i).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(i, rs)| {
            let ok: Vec<&&CaseResult> = rs.iter().filter(|r| r.error.is_none()).collect();
            let est = |f: &dyn Fn(&CaseResult) -> Option<f64>| {
                Estimate::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            CaseSummary {
                label: order[i].label(),
                case: order[i].clone(),
                system_cost: est(&|r| Some(r.totals.system_cost)),
                degradation_cost: est(&|r| Some(r.totals.degradation_cost)),
                net_cost: est(&|r| Some(r.totals.net_cost)),
                curtailment_gwh: est(&|r| Some(r.curtailment_gwh)),
                co2_t: est(&|r| Some(r.totals.co2_t)),
                value_per_ev: est(&|r| r.value_per_ev),
                net_value_per_ev: est(&|r| r.net_value_per_ev),
                emissions_delta_per_ev: est(&|r| r.emissions_delta_per_ev),
                failed_seeds: rs
                    .iter()
                    .filter(|r| r.error.is_some())
                    .map(|r| r.seed)
                    .collect(),
            }
        })
        .collect()
}

/// Checks that every case can be built before any simulation starts.
pub fn validate_cases(config: &RunConfig, cases: &[Case]) -> Result<()> {
    for c in cases {
        let (spec, _) = c.apply(&config.system, &config.simulation.options);
        spec.validate()
            .map_err(|e| Error::Config(format!("case {}: {e}", c.label())))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SweepConfig;

    fn config() -> RunConfig {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../configs/desk.toml"
        ))
        .unwrap();
        RunConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn benchmarks_are_shared() {
        let mut cfg = config();
        cfg.sweep = SweepConfig {
            ev_counts: vec![0, 5000, 10000],
            regimes: vec![ChargingRegime::Smart, ChargingRegime::V2g],
            ..Default::default()
        };
        let cases = expand(&cfg);
        assert_eq!(cases.len(), 5);
        assert_eq!(cases.iter().filter(|c| c.is_benchmark()).count(), 1);
        let runs = required_runs(&cases, &[1, 2]);
        assert_eq!(runs.len(), 10);
    }

    #[test]
    fn case_changes_system() {
        let cfg = config();
        let c = Case {
            wind_capacity: Some(9.0),
            battery: Some(BatteryCell {
                power_gw: 0.2,
                energy_gwh: 0.4,
            }),
            ev_fr_enabled: false,
            ..Case::base(&cfg)
        };
        let (spec, _) = c.apply(&cfg.system, &cfg.simulation.options);
        assert_eq!(spec.wind.installed_capacity, 9.0);
        assert!(!spec.fleet.fr_enabled);
        let bess = spec
            .storages
            .iter()
            .find(|s| s.service == FrService::Efr)
            .unwrap();
        assert_eq!(bess.power_capacity, 0.2);
        assert!(c.label().contains("nofr"));
    }

    #[test]
    fn estimate_standard_error() {
        let e = Estimate::of(&[1.0, 2.0, 3.0]).unwrap();
        assert!((e.mean - 2.0).abs() < 1e-12);
        assert!((e.std_error - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Estimate::of(&[4.0]).unwrap().std_error, 0.0);
        assert!(Estimate::of(&[]).is_none());
    }
}
