//! Rolling-horizon simulation: solve, apply the root decision, advance with
//! the realized wind, repeat.

use std::io::Write;
use std::time::Instant;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degradation::{fade_cubic, fade_linear, full_equivalent_cycles};
use crate::error::{Error, Result};
use crate::lp::{SolveOptions, SolveStatus, SolverBackend};
use crate::system::{aggregate_fleet, fleet_window, on_road_soc, FleetWindow, SystemSpec};
use crate::uc::{build_problem, solve, CutPool, NodeDecision, SystemState, UcOptions};
use crate::wind::{build_tree, hours, sample_wind_path};

/// Start-up and shutdown history kept per block (steps).
const HISTORY_STEPS: usize = 96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    #[serde(default)]
    pub uc: UcOptions,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    /// h
    #[serde(default = "day")]
    pub horizon: f64,
    /// h
    #[serde(default = "half_hour")]
    pub step: f64,
    #[serde(default = "default_start")]
    pub start: NaiveDateTime,
    #[serde(default = "gap")]
    pub relative_gap: f64,
    /// Seconds per solve.
    #[serde(default)]
    pub time_limit: Option<f64>,
}

fn gap() -> f64 {
    1e-4
}
fn default_quantiles() -> Vec<f64> {
    vec![0.005, 0.1, 0.3, 0.5, 0.7, 0.9, 0.995]
}
fn day() -> f64 {
    24.0
}
fn half_hour() -> f64 {
    0.5
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            uc: UcOptions::default(),
            quantiles: default_quantiles(),
            horizon: day(),
            step: half_hour(),
            start: default_start(),
            relative_gap: gap(),
            time_limit: None,
        }
    }
}

/// Monday 6 January 2025, 00:00.
pub fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2025, 1, 6)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

/// One applied half-hour. Powers in GW, energies in GWh, costs in £.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub step: usize,
    pub time: NaiveDateTime,
    pub demand_gw: f64,
    pub thermal_gw: f64,
    pub committed_capacity_gw: f64,
    pub wind_available_gwh: f64,
    pub wind_used_gwh: f64,
    pub wind_curtailed_gwh: f64,
    pub load_shed_gw: f64,
    pub storage_charge_gw: f64,
    pub storage_discharge_gw: f64,
    pub ev_soc: f64,
    pub ev_charge_gw: f64,
    pub ev_discharge_gw: f64,
    pub ev_connected: bool,
    pub efr_gw: f64,
    pub pfr_gw: f64,
    pub ev_efr_gw: f64,
    pub inertia_gws: f64,
    pub fuel_cost: f64,
    pub no_load_cost: f64,
    pub startup_cost: f64,
    pub load_shed_cost: f64,
    pub degradation_cost: f64,
    /// Degradation cost under the cubic fade model, for comparison.
    pub degradation_cost_cubic: f64,
    pub co2_t: f64,
    pub balance_residual_gw: f64,
    pub solver_gap: f64,
    pub cut_rounds: usize,
}

impl LedgerRow {
    pub fn system_cost(&self) -> f64 {
        self.fuel_cost + self.no_load_cost + self.startup_cost + self.load_shed_cost
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub steps: usize,
    pub fuel_cost: f64,
    pub no_load_cost: f64,
    pub startup_cost: f64,
    pub load_shed_cost: f64,
    pub system_cost: f64,
    pub degradation_cost: f64,
    pub degradation_cost_cubic: f64,
    pub net_cost: f64,
    pub co2_t: f64,
    pub thermal_gwh: f64,
    pub wind_available_gwh: f64,
    pub wind_used_gwh: f64,
    pub wind_curtailed_gwh: f64,
    pub load_shed_gwh: f64,
    pub ev_charge_gwh: f64,
    pub ev_discharge_gwh: f64,
    pub ev_full_equivalent_cycles: f64,
    pub max_solver_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationLedger {
    pub rows: Vec<LedgerRow>,
    pub totals: LedgerTotals,
    pub days: usize,
    pub seed: u64,
    pub n_ev: u64,
    /// Set when a solver failure stopped the run early.
    pub aborted: Option<String>,
    pub wall_seconds: f64,
}

impl SimulationLedger {
    fn new(days: usize, seed: u64, n_ev: u64) -> Self {
        Self {
            rows: Vec::new(),
            totals: LedgerTotals::default(),
            days,
            seed,
            n_ev,
            aborted: None,
            wall_seconds: 0.0,
        }
    }

    /// Recomputes the totals as column sums.
    pub fn recompute_totals(&mut self, usable_ev_capacity_gwh: f64) {
        let mut t = LedgerTotals {
            steps: self.rows.len(),
            ..Default::default()
        };
        for r in &self.rows {
            let dt = 0.5;
            t.fuel_cost += r.fuel_cost;
            t.no_load_cost += r.no_load_cost;
            t.startup_cost += r.startup_cost;
            t.load_shed_cost += r.load_shed_cost;
            t.degradation_cost += r.degradation_cost;
            t.degradation_cost_cubic += r.degradation_cost_cubic;
            t.co2_t += r.co2_t;
            t.thermal_gwh += r.thermal_gw * dt;
            t.wind_available_gwh += r.wind_available_gwh;
            t.wind_used_gwh += r.wind_used_gwh;
            t.wind_curtailed_gwh += r.wind_curtailed_gwh;
            t.load_shed_gwh += r.load_shed_gw * dt;
            t.ev_charge_gwh += r.ev_charge_gw * dt;
            t.ev_discharge_gwh += r.ev_discharge_gw * dt;
            t.max_solver_gap = t.max_solver_gap.max(r.solver_gap);
        }
        t.system_cost = t.fuel_cost + t.no_load_cost + t.startup_cost + t.load_shed_cost;
        t.net_cost = t.system_cost + t.degradation_cost;
        t.ev_full_equivalent_cycles =
            full_equivalent_cycles(t.ev_discharge_gwh, usable_ev_capacity_gwh);
        self.totals = t;
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Checks balance, SOC bounds, curtailment sign, departure SOC and
    /// totals. Returns one message per violation.
    pub fn check_invariants(&self, spec: &SystemSpec, tol: f64) -> Vec<String> {
        let mut bad = Vec::new();
        let fleet = &spec.fleet;
        let mut sum_cost = 0.0;
        for r in &self.rows {
            if r.balance_residual_gw.abs() >= tol {
                bad.push(format!(
                    "step {}: balance residual {:.3e} GW",
                    r.step, r.balance_residual_gw
                ));
            }
            if r.wind_curtailed_gwh < -tol {
                bad.push(format!("step {}: negative curtailment", r.step));
            }
            if ((r.wind_available_gwh - r.wind_used_gwh) - r.wind_curtailed_gwh).abs() > tol {
                bad.push(format!(
                    "step {}: curtailment is not available minus used",
                    r.step
                ));
            }
            if fleet.n_ev > 0 {
                if r.ev_soc < fleet.soc_min - tol || r.ev_soc > fleet.soc_max + tol {
                    bad.push(format!(
                        "step {}: fleet SOC {:.6} out of bounds",
                        r.step, r.ev_soc
                    ));
                }
                if fleet_window(fleet, &spec.calendar, r.time) == FleetWindow::DepartureInstant
                    && (r.ev_soc - fleet.c_out).abs() > tol
                {
                    bad.push(format!(
                        "step {}: departure SOC {:.6} != c_out",
                        r.step, r.ev_soc
                    ));
                }
            }
            sum_cost += r.system_cost();
        }
        if (sum_cost - self.totals.system_cost).abs() > 1e-6 * sum_cost.abs().max(1.0) {
            bad.push("system cost total differs from the column sum".into());
        }
        bad
    }
}

fn annualize(days: usize) -> f64 {
    if days < 365 {
        log::info!("annualizing a {days}-day run by linear scaling");
    }
    365.0 / days as f64
}

fn same_basis(a: &SimulationLedger, b: &SimulationLedger) -> Result<()> {
    if a.days != b.days || a.seed != b.seed || a.rows.len() != b.rows.len() {
        return Err(Error::InvalidInput(
            "ledgers must cover the same days and wind seed".into(),
        ));
    }
    Ok(())
}

/// Annual operating-cost saving per vehicle relative to a zero-EV benchmark.
pub fn value_per_ev(
    fleet: &SimulationLedger,
    benchmark: &SimulationLedger,
    n_ev: u64,
) -> Result<f64> {
    same_basis(fleet, benchmark)?;
    if n_ev == 0 {
        return Err(Error::InvalidInput("n_ev must be positive".into()));
    }
    Ok(
        (benchmark.totals.system_cost - fleet.totals.system_cost) / n_ev as f64
            * annualize(fleet.days),
    )
}

/// As [`value_per_ev`], with the fleet's degradation cost deducted.
pub fn net_value_per_ev(
    fleet: &SimulationLedger,
    benchmark: &SimulationLedger,
    n_ev: u64,
) -> Result<f64> {
    same_basis(fleet, benchmark)?;
    if n_ev == 0 {
        return Err(Error::InvalidInput("n_ev must be positive".into()));
    }
    Ok((benchmark.totals.net_cost - fleet.totals.net_cost) / n_ev as f64 * annualize(fleet.days))
}

/// Annual cost saving per additional vehicle between two penetrations.
pub fn marginal_value(
    low: (&SimulationLedger, u64),
    high: (&SimulationLedger, u64),
) -> Result<f64> {
    same_basis(low.0, high.0)?;
    if low.1 == high.1 {
        return Err(Error::InvalidInput(
            "penetrations are equal: zero denominator".into(),
        ));
    }
    let dn = high.1 as f64 - low.1 as f64;
    Ok((low.0.totals.system_cost - high.0.totals.system_cost) / dn * annualize(low.0.days))
}

/// Total CO2 (t).
pub fn emissions(ledger: &SimulationLedger) -> f64 {
    ledger.rows.iter().map(|r| r.co2_t).sum()
}

/// Annual CO2 change per vehicle relative to the benchmark (negative is a reduction).
pub fn emissions_delta_per_ev(
    fleet: &SimulationLedger,
    benchmark: &SimulationLedger,
    n_ev: u64,
) -> Result<f64> {
    same_basis(fleet, benchmark)?;
    if n_ev == 0 {
        return Err(Error::InvalidInput("n_ev must be positive".into()));
    }
    Ok((emissions(fleet) - emissions(benchmark)) / n_ev as f64 * annualize(fleet.days))
}

fn ledger_row(
    spec: &SystemSpec,
    step: usize,
    d: &NodeDecision,
    gap: f64,
    cut_rounds: usize,
) -> LedgerRow {
    let dt = d.delta_tau;
    let fleet = &spec.fleet;
    let mut fuel = 0.0;
    let mut no_load = 0.0;
    let mut startup = 0.0;
    let mut co2 = 0.0;
    let mut committed = 0.0;
    for (gi, g) in spec.generators.iter().enumerate() {
        let mwh = d.output[gi] * dt * 1000.0;
        fuel += g.marginal_cost * mwh;
        co2 += g.emission_factor * mwh;
        no_load += g.no_load_cost * d.commitment[gi] * dt;
        startup += g.startup_cost * d.startups[gi];
        committed += g.capacity * d.commitment[gi];
    }
    let (deg, deg_cubic) = if fleet.n_ev > 0 {
        let soc = if d.ev_connected {
            d.ev.soc
        } else {
            on_road_soc(fleet, d.t_ab)
        };
        let scale = dt * fleet.n_ev as f64 * spec.degradation.c_d;
        (
            fade_linear(soc, &spec.degradation).q_l * scale,
            fade_cubic(soc, &spec.degradation).q_l * scale,
        )
    } else {
        (0.0, 0.0)
    };
    let ev_efr = if spec.fleet.n_ev > 0 { d.ev.fr } else { 0.0 };
    LedgerRow {
        step,
        time: d.t_ab,
        demand_gw: d.demand,
        thermal_gw: d.output.iter().sum(),
        committed_capacity_gw: committed,
        wind_available_gwh: d.wind_available * dt,
        wind_used_gwh: d.wind_used * dt,
        wind_curtailed_gwh: d.wind_curtailed * dt,
        load_shed_gw: d.load_shed,
        storage_charge_gw: d.storage.iter().map(|s| s.charge).sum(),
        storage_discharge_gw: d.storage.iter().map(|s| s.discharge).sum(),
        ev_soc: d.ev.soc,
        ev_charge_gw: d.ev.charge,
        ev_discharge_gw: d.ev.discharge,
        ev_connected: d.ev_connected,
        efr_gw: d.r_e,
        pfr_gw: d.r_p,
        ev_efr_gw: ev_efr,
        inertia_gws: d.inertia,
        fuel_cost: fuel,
        no_load_cost: no_load,
        startup_cost: startup,
        load_shed_cost: d.load_shed * dt * 1000.0 * spec.voll,
        degradation_cost: deg,
        degradation_cost_cubic: deg_cubic,
        co2_t: co2,
        balance_residual_gw: d.balance_residual(),
        solver_gap: gap,
        cut_rounds,
    }
}

/// State after applying `root` for one step and observing `next_wind`.
pub fn advance_state(
    spec: &SystemSpec,
    state: &SystemState,
    root: &NodeDecision,
    lead_plan: &[(usize, NaiveDateTime, f64)],
    next_wind: f64,
) -> SystemState {
    let dt = root.delta_tau;
    let next_time = state.time + hours(dt);
    let units = spec
        .generators
        .iter()
        .enumerate()
        .map(|(gi, _)| {
            let mut h = state.units[gi].clone();
            h.online = root.commitment[gi].round() as u32;
            h.startups.push(root.startups[gi].round() as u32);
            h.shutdowns.push(root.shutdowns[gi].round() as u32);
            for v in [&mut h.startups, &mut h.shutdowns] {
                if v.len() > HISTORY_STEPS {
                    v.drain(..v.len() - HISTORY_STEPS);
                }
            }
            h.output = root.output[gi];
            h.planned.retain(|t, _| *t >= next_time);
            for &(g, t, u) in lead_plan {
                if g == gi && t >= next_time {
                    h.planned.entry(t).or_insert(u.round() as u32);
                }
            }
            h
        })
        .collect();
    let storage_soc = spec
        .storages
        .iter()
        .zip(&root.storage)
        .map(|(s, d)| {
            let e = d.soc
                + dt * (s.efficiency * d.charge - d.discharge / s.efficiency) / s.energy_capacity;
            e.clamp(0.0, 1.0)
        })
        .collect();
    let fleet = &spec.fleet;
    let ev_soc = if fleet.n_ev > 0 {
        let agg = aggregate_fleet(fleet);
        let mut e = root.ev.soc
            + dt * (fleet.efficiency * root.ev.charge - root.ev.discharge / fleet.efficiency)
                / agg.energy;
        if fleet_window(fleet, &spec.calendar, next_time) == FleetWindow::ArrivalInstant {
            e -= fleet.c_out - fleet.c_in;
        }
        e
    } else {
        state.ev_soc
    };
    SystemState {
        time: next_time,
        units,
        storage_soc,
        ev_soc,
        wind: next_wind,
    }
}

/// Runs `days` days of half-hourly rolling-horizon scheduling with the wind
/// realization drawn from `seed`. Solver failures stop the run and are
/// recorded in `aborted`; the rows up to that point are kept.
pub fn simulate(
    spec: &SystemSpec,
    days: usize,
    seed: u64,
    options: &SimOptions,
    backend: &dyn SolverBackend,
) -> Result<SimulationLedger> {
    if days == 0 {
        return Err(Error::InvalidInput("days must be at least 1".into()));
    }
    spec.validate()?;
    let steps_per_day = (24.0 / options.step).round() as usize;
    let steps = days * steps_per_day;
    let lookahead = (options.horizon / options.step).round() as usize + 1;
    let demand = spec
        .demand
        .trace(options.start, steps + lookahead, &spec.calendar)?;
    let wind = sample_wind_path(&spec.wind, seed, steps + 1)?;
    let solve_opts = SolveOptions {
        relative_gap: options.relative_gap,
        time_limit: options.time_limit,
    };
    let usable = {
        let agg = aggregate_fleet(&spec.fleet);
        agg.energy * (spec.fleet.soc_max - spec.fleet.soc_min)
    };

    let started = Instant::now();
    let mut ledger = SimulationLedger::new(days, seed, spec.fleet.n_ev);
    let mut state = SystemState::initial(spec, options.start, wind[0]);
    let mut pool = CutPool::default();
    for k in 0..steps {
        let result = (|| -> Result<_> {
            let tree = build_tree(
                &spec.wind,
                state.wind,
                state.time,
                &options.quantiles,
                options.horizon,
                options.step,
            )?;
            let mut problem = build_problem(spec, &tree, &demand, &state, &options.uc)?;
            pool.apply(&mut problem);
            let sol = solve(&mut problem, backend, &solve_opts)?;
            pool.absorb(&problem);
            Ok((problem, sol))
        })();
        let (problem, sol) = match result {
            Ok(x) => x,
            Err(e) => {
                log::error!("step {k} at {}: {e}", state.time);
                ledger.aborted = Some(format!("step {k} at {}: {e}", state.time));
                break;
            }
        };
        if sol.status == SolveStatus::Limit {
            log::warn!("step {k}: time limit, gap {:.2e}", sol.gap);
        }
        let root = sol.root();
        ledger
            .rows
            .push(ledger_row(spec, k, root, sol.gap, sol.cut_rounds));

        let next_time = state.time + hours(options.step);
        let decisions = &sol.decisions;
        let lead_plan: Vec<(usize, NaiveDateTime, f64)> = spec
            .generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.commitment_lead > 0.0)
            .flat_map(|(gi, g)| {
                let lead = hours(g.commitment_lead);
                problem
                    .tree
                    .nodes
                    .iter()
                    .filter(move |n| n.branch.unwrap_or(0) == 0 && n.t_ab - lead < next_time)
                    .map(move |n| (gi, n.t_ab, decisions[n.id].commitment[gi]))
                    .collect::<Vec<_>>()
            })
            .collect();
        state = advance_state(spec, &state, root, &lead_plan, wind[k + 1]);
        if (k + 1) % steps_per_day == 0 {
            log::info!(
                "seed {seed}: day {} done, {:.1}s elapsed",
                (k + 1) / steps_per_day,
                started.elapsed().as_secs_f64()
            );
        }
    }
    ledger.recompute_totals(usable);
    ledger.wall_seconds = started.elapsed().as_secs_f64();
    Ok(ledger)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub days: usize,
    pub relative_gap: f64,
    pub max_solver_gap: f64,
    pub version: String,
    pub backend: String,
    pub created: String,
}

/// Hex SHA-256 of the configuration text.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, cost: f64) -> LedgerRow {
        LedgerRow {
            step,
            time: default_start() + hours(0.5 * step as f64),
            demand_gw: 1.0,
            thermal_gw: 1.0,
            committed_capacity_gw: 1.0,
            wind_available_gwh: 0.0,
            wind_used_gwh: 0.0,
            wind_curtailed_gwh: 0.0,
            load_shed_gw: 0.0,
            storage_charge_gw: 0.0,
            storage_discharge_gw: 0.0,
            ev_soc: 0.9,
            ev_charge_gw: 0.0,
            ev_discharge_gw: 0.0,
            ev_connected: true,
            efr_gw: 0.0,
            pfr_gw: 0.0,
            ev_efr_gw: 0.0,
            inertia_gws: 0.0,
            fuel_cost: cost,
            no_load_cost: 0.0,
            startup_cost: 0.0,
            load_shed_cost: 0.0,
            degradation_cost: 0.0,
            degradation_cost_cubic: 0.0,
            co2_t: 394.0,
            balance_residual_gw: 0.0,
            solver_gap: 0.0,
            cut_rounds: 0,
        }
    }

    fn ledger(cost: f64, n_ev: u64) -> SimulationLedger {
        let mut l = SimulationLedger::new(1, 3, n_ev);
        l.rows = (0..48).map(|i| row(i, cost)).collect();
        l.recompute_totals(1.0);
        l
    }

    #[test]
    fn value_arithmetic() {
        let bench = ledger(100.0, 0);
        assert_eq!(value_per_ev(&bench, &bench, 10).unwrap(), 0.0);
        let worse = ledger(101.0, 10);
        assert!(value_per_ev(&worse, &bench, 10).unwrap() < 0.0);
        let better = ledger(99.0, 10);
        assert!((value_per_ev(&better, &bench, 10).unwrap() - 48.0 / 10.0 * 365.0).abs() < 1e-9);
        assert!(marginal_value((&bench, 5), (&better, 5)).is_err());
        assert!(
            (marginal_value((&bench, 0), (&better, 10)).unwrap() - 48.0 / 10.0 * 365.0).abs()
                < 1e-9
        );
    }

    #[test]
    fn mismatched_ledgers_rejected() {
        let a = ledger(1.0, 0);
        let mut b = ledger(1.0, 1);
        b.seed = 4;
        assert!(value_per_ev(&b, &a, 1).is_err());
    }

    #[test]
    fn totals_are_sums() {
        let l = ledger(2.5, 0);
        assert!((l.totals.system_cost - 120.0).abs() < 1e-12);
        assert!((emissions(&l) - 48.0 * 394.0).abs() < 1e-9);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            config_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
