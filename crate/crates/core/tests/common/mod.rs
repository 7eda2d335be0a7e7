#![allow(dead_code)]

use chrono::NaiveDateTime;
use evsuc::lp::SolveOptions;
use evsuc::rolling::default_start;
use evsuc::system::{
    Calendar, ChargingRegime, DemandProfile, DemandTrace, EvFleetSpec, FrService, FrequencyParams,
    GeneratorSpec, ReserveSpec, StorageSpec, SystemSpec,
};
use evsuc::uc::{build_problem, SystemState, UcOptions, UcProblem};
use evsuc::wind::{build_tree, LogisticTransform, ScenarioTree, WindModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn generator(
    name: &str,
    capacity: f64,
    msg: f64,
    marginal_cost: f64,
    no_load_cost: f64,
    startup_cost: f64,
) -> GeneratorSpec {
    GeneratorSpec {
        name: name.into(),
        units: 1,
        capacity,
        msg,
        inertia_constant: 4.0,
        marginal_cost,
        no_load_cost,
        startup_cost,
        min_up: 0.0,
        min_down: 0.0,
        commitment_lead: 0.0,
        must_run: false,
        emission_factor: 0.0,
        max_pfr_share: 0.2,
    }
}

pub fn system(generators: Vec<GeneratorSpec>, demand_gw: f64, wind_gw: f64) -> SystemSpec {
    SystemSpec {
        generators,
        storages: vec![],
        fleet: EvFleetSpec::reference(0, ChargingRegime::Smart),
        freq: FrequencyParams {
            p_l: 0.3,
            ..FrequencyParams::gb()
        },
        demand: DemandProfile::Synthetic {
            min_gw: demand_gw,
            max_gw: demand_gw,
            weekend_factor: 1.0,
        },
        wind: WindModel {
            installed_capacity: wind_gw,
            ar_coefficient: 0.95,
            noise_std: 0.3,
            transform: LogisticTransform::default(),
        },
        voll: 30_000.0,
        calendar: Calendar::default(),
        reserve: ReserveSpec::default(),
        degradation: Default::default(),
    }
}

pub fn flat(values: Vec<f64>) -> DemandTrace {
    DemandTrace {
        start: default_start(),
        step_h: 0.5,
        values,
    }
}

pub fn tree(
    spec: &SystemSpec,
    wind_now: f64,
    start: NaiveDateTime,
    quantiles: &[f64],
    horizon: f64,
) -> ScenarioTree {
    build_tree(&spec.wind, wind_now, start, quantiles, horizon, 0.5).unwrap()
}

pub fn problem(
    spec: &SystemSpec,
    tree: &ScenarioTree,
    demand: &DemandTrace,
    options: &UcOptions,
) -> evsuc::Result<UcProblem> {
    let state = SystemState::initial(spec, tree.root().t_ab, tree.root().wind_available);
    build_problem(spec, tree, demand, &state, options)
}

pub fn exact() -> SolveOptions {
    SolveOptions {
        relative_gap: 1e-9,
        time_limit: None,
    }
}

pub fn no_frequency() -> UcOptions {
    UcOptions {
        frequency_constraints: false,
        ..UcOptions::default()
    }
}

/// Thursday 9 January 2025 at `h`:`m`.
pub fn thursday(h: u32, m: u32) -> NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2025, 1, 9)
        .unwrap()
        .and_hms_opt(h, m, 0)
        .unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Cheapest dispatch of committed single units plus load shed, filling in
/// merit order above minimum stable generation.
pub fn dispatch_cost(gens: &[(f64, f64, f64)], on: &[bool], demand: f64, voll: f64) -> Option<f64> {
    let floor: f64 = gens
        .iter()
        .zip(on)
        .filter(|(_, &o)| o)
        .map(|(g, _)| g.1)
        .sum();
    if floor > demand + 1e-12 {
        return None;
    }
    let mut cost: f64 = gens
        .iter()
        .zip(on)
        .filter(|(_, &o)| o)
        .map(|(g, _)| g.1 * g.2)
        .sum();
    let mut rest = demand - floor;
    let mut order: Vec<usize> = (0..gens.len()).filter(|&i| on[i]).collect();
    order.sort_by(|&a, &b| gens[a].2.total_cmp(&gens[b].2));
    for i in order {
        let x = rest.min(gens[i].0 - gens[i].1);
        cost += x * gens[i].2;
        rest -= x;
    }
    Some(1000.0 * (cost + rest * voll))
}

/// Cheapest schedule of two single units over `demand.len()` half-hour
/// steps, by enumerating every on/off pattern. Both units start online.
/// Generator tuples are (capacity, msg, marginal, no-load, startup).
pub fn enumerate_two_units(gens: &[(f64, f64, f64, f64, f64)], demand: &[f64], voll: f64) -> f64 {
    let dispatch: Vec<(f64, f64, f64)> = gens.iter().map(|g| (g.0, g.1, g.2)).collect();
    let mut best = f64::INFINITY;
    for pattern in 0u32..(1 << (2 * demand.len())) {
        let on = |t: usize, g: usize| pattern >> (2 * t + g) & 1 == 1;
        let mut total = 0.0;
        let mut feasible = true;
        for (t, &d) in demand.iter().enumerate() {
            let state = [on(t, 0), on(t, 1)];
            match dispatch_cost(&dispatch, &state, d, voll) {
                Some(c) => total += 0.5 * c,
                None => feasible = false,
            }
            for g in 0..2 {
                let before = if t == 0 { true } else { on(t - 1, g) };
                if state[g] {
                    total += 0.5 * gens[g].3;
                    if !before {
                        total += gens[g].4;
                    }
                }
            }
        }
        if feasible {
            best = best.min(total);
        }
    }
    best
}

/// Random two-unit, three-step deterministic instance.
pub fn two_unit_draw(rng: &mut ChaCha8Rng) -> (Vec<(f64, f64, f64, f64, f64)>, Vec<f64>) {
    let gens: Vec<(f64, f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let cap = rng.gen_range(0.5..1.5);
            (
                cap,
                cap * rng.gen_range(0.2..0.6),
                rng.gen_range(20.0..120.0),
                rng.gen_range(0.0..4000.0),
                rng.gen_range(0.0..20000.0),
            )
        })
        .collect();
    let demand: Vec<f64> = (0..3).map(|_| rng.gen_range(0.3..2.2)).collect();
    (gens, demand)
}

pub fn stochastic_instance(rng: &mut ChaCha8Rng) -> (SystemSpec, Vec<f64>) {
    let mut gens = vec![];
    for i in 0..3 {
        let mut g = generator(
            &format!("g{i}"),
            rng.gen_range(0.5..1.0),
            0.0,
            rng.gen_range(20.0..90.0),
            rng.gen_range(0.0..2000.0),
            rng.gen_range(0.0..5000.0),
        );
        g.msg = g.capacity * 0.4;
        g.inertia_constant = rng.gen_range(3.0..6.0);
        g.max_pfr_share = rng.gen_range(0.3..0.5);
        gens.push(g);
    }
    let mut spec = system(gens, 1.0, 0.6);
    spec.freq.p_l = 0.1;
    spec.storages.push(StorageSpec {
        name: "battery".into(),
        energy_capacity: 0.05,
        power_capacity: rng.gen_range(0.0..0.1),
        efficiency: 0.95,
        service: FrService::Efr,
        pfr_limit: None,
        initial_soc: 0.5,
    });
    let demand = (0..3).map(|_| rng.gen_range(0.8..1.3)).collect();
    (spec, demand)
}
