//! Acceptance runner. Prints one PASS/FAIL line per criterion.
//!
//! By default failures are reported but do not fail the test binary, so
//! that `cargo test` still runs the remaining targets. Set
//! `ACCEPTANCE_STRICT=1` to exit nonzero on any failure, and
//! `ACCEPTANCE_SKIP_DESK=1` to skip the multi-day desk runs (criteria 6-9
//! and 11).

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::*;
use evsuc::config::RunConfig;
use evsuc::degradation::{fade_cubic, fade_linear};
use evsuc::frequency::{
    min_nadir_inertia, mstg_curve, nadir_ok, rocof_min_inertia, swing_nadir_oracle, FrState,
};
use evsuc::lp::{ConicBranchAndBound, HighsBackend, SolveOptions};
use evsuc::rolling::{default_start, marginal_value, simulate, value_per_ev, SimulationLedger};
use evsuc::study::Case;
use evsuc::system::{ChargingRegime, FrequencyParams};
use evsuc::uc::{check_solution, solve, NadirMode, UcOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    title: &'static str,
    passed: Option<bool>,
    detail: String,
}

fn outcome(id: u32, title: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome {
        id,
        title,
        passed: Some(passed),
        detail,
    }
}

fn report(o: &Outcome) {
    let tag = match o.passed {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!("{tag} {:>2} {}: {}", o.id, o.title, o.detail);
}

fn sig6(a: f64, b: f64) -> bool {
    (a - b).abs() <= 5e-7 * b.abs()
}

fn rocof_floor() -> Outcome {
    let f = FrequencyParams::gb();
    let h = rocof_min_inertia(&f);
    // H = P_L f0 / (2 RoCoF_max)
    let expected = f.p_l * f.f0 / (2.0 * f.rocof_max);
    outcome(
        1,
        "RoCoF inertia floor",
        h == 45.0 && h == expected,
        format!("{h} GWs"),
    )
}

fn nadir_certification() -> Outcome {
    let f = FrequencyParams::gb();
    // closed form for PFR only, R = P_L: the drop peaks at t_p
    let closed = |t: f64| f.f0 * f.p_l * t / (4.0 * f.delta_f_max);
    let slow = min_nadir_inertia(0.0, f.p_l, &f);
    let fast = min_nadir_inertia(0.0, f.p_l, &FrequencyParams { t_p: 1.0, ..f });
    let points_ok = sig6(slow, 281.25)
        && sig6(fast, 28.125)
        && sig6(closed(10.0), 281.25)
        && sig6(closed(1.0), 28.125);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let floor = rocof_min_inertia(&f);
    let (mut compared, mut band, mut wrong) = (0, 0, 0);
    for _ in 0..1000 {
        let r_e = rng.gen_range(0.0..f.p_l);
        let r_p = rng.gen_range((f.p_l - r_e)..(2.0 * f.p_l));
        let s = FrState {
            h: rng.gen_range(floor..600.0),
            r_e,
            r_p,
        };
        let nadir = swing_nadir_oracle(&s, &f, 5e-4).unwrap();
        if (nadir - f.delta_f_max).abs() <= 1e-3 * f.delta_f_max {
            band += 1;
            continue;
        }
        compared += 1;
        if nadir_ok(&s, &f) != (nadir <= f.delta_f_max) {
            wrong += 1;
        }
    }
    outcome(
        2,
        "nadir boundary certification",
        points_ok && wrong == 0,
        format!(
            "t=10s {slow:.6} GWs, t=1s {fast:.6} GWs; {wrong} disagreements in {compared} states ({band} in boundary band)"
        ),
    )
}

fn degradation_model() -> Outcome {
    let p = evsuc::degradation::DegradationParams::default();
    let (lo, hi) = (0.2, 0.9);
    let (q_lo, q_hi) = (fade_cubic(lo, &p).q_l, fade_cubic(hi, &p).q_l);
    let ratio = q_lo / q_hi;
    let mid = 0.5 * (q_lo + q_hi);
    let at_omega = fade_cubic(0.76, &p).q_l;
    let (worst, worst_at) = (0..1000)
        .map(|i| lo + (hi - lo) * i as f64 / 999.0)
        .map(|s| (fade_linear(s, &p).q_l - fade_cubic(s, &p).q_l, s))
        .fold(
            (f64::NEG_INFINITY, 0.0),
            |a, b| if b.0 > a.0 { b } else { a },
        );
    let ok_ratio = (ratio - 0.45).abs() <= 0.005;
    let ok_mid = (at_omega - mid).abs() <= 0.01 * mid;
    let ok_excess = worst <= 5e-6;
    outcome(
        3,
        "degradation model",
        ok_ratio && ok_mid && ok_excess,
        format!(
            "ratio {ratio:.4} [{}], shoulder {:.2}% off midpoint [{}], linear excess {worst:.3e} at SOC {worst_at:.3} [{}]",
            ok(ok_ratio),
            100.0 * (at_omega - mid).abs() / mid,
            ok(ok_mid),
            ok(ok_excess)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (gens, demand) = two_unit_draw(&mut rng);
        let specs = gens
            .iter()
            .enumerate()
            .map(|(i, g)| generator(&format!("g{i}"), g.0, g.1, g.2, g.3, g.4))
            .collect();
        let spec = system(specs, 1.0, 0.0);
        let t = tree(&spec, 0.0, default_start(), &[0.5], 1.0);
        let mut p = problem(&spec, &t, &flat(demand.clone()), &no_frequency()).unwrap();
        let sol = solve(&mut p, &HighsBackend::default(), &exact()).unwrap();
        worst = worst.max(rel(
            sol.objective,
            enumerate_two_units(&gens, &demand, spec.voll),
        ));
    }
    outcome(
        4,
        "brute-force UC equivalence",
        worst <= 1e-6,
        format!("20 draws, worst relative error {worst:.2e}"),
    )
}

fn cuts_vs_conic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let opts = SolveOptions {
        relative_gap: 1e-7,
        time_limit: None,
    };
    let conic_options = UcOptions {
        nadir_mode: NadirMode::Conic,
        ..UcOptions::default()
    };
    let (mut worst, mut insecure, mut failed) = (0.0f64, 0, 0);
    for _ in 0..10 {
        let (spec, demand) = stochastic_instance(&mut rng);
        let t = tree(&spec, 0.3, default_start(), &[0.25, 0.75], 1.0);
        let d = flat(demand);
        let run = || -> evsuc::Result<(f64, f64, usize)> {
            let mut cuts = problem(&spec, &t, &d, &UcOptions::default())?;
            let a = solve(&mut cuts, &HighsBackend::default(), &opts)?;
            let bad = a
                .decisions
                .iter()
                .filter(|n| !nadir_ok(&n.fr_state(), &cuts.freq))
                .count()
                + usize::from(!check_solution(&cuts, &a).passes(1e-6));
            let mut conic = problem(&spec, &t, &d, &conic_options)?;
            let b = solve(&mut conic, &ConicBranchAndBound::default(), &opts)?;
            Ok((a.objective, b.objective, bad))
        };
        match run() {
            Ok((a, b, bad)) => {
                worst = worst.max(rel(a, b));
                insecure += bad;
            }
            Err(_) => failed += 1,
        }
    }
    outcome(
        5,
        "cuts-vs-conic equivalence",
        worst <= 1e-3 && insecure == 0 && failed == 0,
        format!(
            "10 instances, worst gap {:.3e}%, {insecure} insecure nodes, {failed} solve failures",
            100.0 * worst
        ),
    )
}

fn mstg_shape() -> Outcome {
    let f = FrequencyParams::gb();
    let (avg_h, msg_fraction) = (4.0, 0.5);
    let grid: Vec<f64> = (0..=200)
        .map(|i| f.p_l * (1.0 + 9.0 * i as f64 / 200.0))
        .collect();
    let slow = mstg_curve(&f, avg_h, msg_fraction, 10.0, &grid).unwrap();
    let fast = mstg_curve(&f, avg_h, msg_fraction, 1.0, &grid).unwrap();
    // independent curve: PFR-only nadir bound against the RoCoF floor
    let floor = msg_fraction * f.p_l * f.f0 / (2.0 * f.rocof_max) / avg_h;
    let expect = |r: f64, t: f64| {
        (msg_fraction * f.f0 * f.p_l * f.p_l * t / (4.0 * f.delta_f_max * r) / avg_h).max(floor)
    };
    let mut ok_values = true;
    for (pt, q) in slow.iter().zip(&fast) {
        ok_values &= rel(pt.mstg.unwrap(), expect(pt.fr, 10.0)) < 1e-9;
        ok_values &= rel(q.mstg.unwrap(), expect(q.fr, 1.0)) < 1e-9;
    }
    let vals: Vec<f64> = slow.iter().map(|p| p.mstg.unwrap()).collect();
    let reach = vals.iter().position(|&v| v <= floor * (1.0 + 1e-12));
    let until = reach.unwrap_or(vals.len() - 1);
    let decreasing = vals[..=until].windows(2).all(|w| w[1] < w[0]);
    let flat_after = vals[until..]
        .iter()
        .all(|&v| (v - floor).abs() <= 1e-12 * floor);
    let below = slow
        .iter()
        .zip(&fast)
        .all(|(s, q)| q.mstg.unwrap() <= s.mstg.unwrap());
    outcome(
        10,
        "MSTG curve",
        ok_values && decreasing && reach.is_some() && flat_after && below,
        format!(
            "t=10s meets the {floor:.3} GW floor at FR {:.3} GW; values {}, t=1s below t=10s {}",
            reach.map(|i| grid[i]).unwrap_or(f64::NAN),
            ok(ok_values),
            ok(below)
        ),
    )
}

struct DeskRun {
    case: Case,
    ledger: Option<SimulationLedger>,
    error: Option<String>,
    violations: Vec<String>,
}

struct Desk {
    runs: Vec<DeskRun>,
}

impl Desk {
    fn get(&self, case: &Case) -> Option<&SimulationLedger> {
        self.runs
            .iter()
            .find(|r| &r.case == case)
            .and_then(|r| r.ledger.as_ref())
    }
}

fn desk_config() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    RunConfig::load(path).expect("desk config").config
}

fn variant(base: &Case, n_ev: u64, regime: ChargingRegime) -> Case {
    Case {
        n_ev,
        regime,
        ..base.clone()
    }
}

fn run_desk(cfg: &RunConfig, cases: &[Case]) -> Desk {
    let seed = cfg.simulation.seeds[0];
    let days = cfg.simulation.days;
    let mut runs = Vec::new();
    for case in cases {
        let started = Instant::now();
        let (spec, options) = case.apply(&cfg.system, &cfg.simulation.options);
        let result = simulate(&spec, days, seed, &options, &HighsBackend::default());
        let (ledger, error, violations) = match result {
            Ok(l) => {
                let v = l.check_invariants(&spec, 1e-6);
                let e = l.aborted.clone();
                (Some(l), e, v)
            }
            Err(e) => (None, Some(e.to_string()), vec![]),
        };
        eprintln!(
            "acceptance: {} ({days} days) in {:.0}s{}",
            case.label(),
            started.elapsed().as_secs_f64(),
            error
                .as_deref()
                .map(|e| format!(", error: {e}"))
                .unwrap_or_default()
        );
        runs.push(DeskRun {
            case: case.clone(),
            ledger: ledger.filter(|l| l.aborted.is_none()),
            error,
            violations,
        });
    }
    let dump: Vec<_> = runs
        .iter()
        .map(|r| {
            serde_json::json!({
                "label": r.case.label(),
                "totals": r.ledger.as_ref().map(|l| &l.totals),
                "error": r.error,
                "violations": r.violations.len(),
            })
        })
        .collect();
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance_desk.json");
    if std::fs::write(&out, serde_json::to_string_pretty(&dump).unwrap()).is_ok() {
        eprintln!("acceptance: desk totals written to {}", out.display());
    }
    Desk { runs }
}

fn missing(id: u32, title: &'static str, what: &str) -> Outcome {
    outcome(id, title, false, format!("{what} did not complete"))
}

fn desk_criteria(cfg: &RunConfig) -> Vec<Outcome> {
    let base = Case::base(cfg);
    let n = 10_000;
    let bench = base.benchmark();
    let v2g = Case {
        penalize_degradation: false,
        ev_fr_enabled: true,
        ..variant(&base, n, ChargingRegime::V2g)
    };
    let smart = variant(&v2g, n, ChargingRegime::Smart);
    let unmanaged = variant(&v2g, n, ChargingRegime::Unmanaged);
    let (low, high) = (5_000, 20_000);
    let v2g_low = variant(&v2g, low, ChargingRegime::V2g);
    let v2g_high = variant(&v2g, high, ChargingRegime::V2g);
    let no_fr = Case {
        ev_fr_enabled: false,
        ..v2g.clone()
    };
    let pen = Case {
        penalize_degradation: true,
        ..v2g.clone()
    };
    let cases = [
        bench.clone(),
        unmanaged.clone(),
        smart.clone(),
        v2g.clone(),
        v2g_low.clone(),
        v2g_high.clone(),
        no_fr.clone(),
        pen.clone(),
    ];
    let desk = run_desk(cfg, &cases);
    let mut out = Vec::new();

    let t6 = "regime ordering";
    out.push(match (desk.get(&bench), desk.get(&unmanaged), desk.get(&smart), desk.get(&v2g)) {
        (Some(b), Some(u), Some(s), Some(v)) => {
            let value = |l| value_per_ev(l, b, n).unwrap();
            let (vu, vs, vv) = (value(u), value(s), value(v));
            let c = |l: &SimulationLedger| l.totals.wind_curtailed_gwh;
            let values_ok = vv > vs && vs > 0.0 && 0.0 > vu;
            let curtail_ok = c(v) <= c(s) && c(s) <= c(b);
            outcome(
                6,
                t6,
                values_ok && curtail_ok,
                format!(
                    "value/EV/yr V2G {vv:.0}, Smart {vs:.0}, Unmanaged {vu:.0} [{}]; curtailment GWh V2G {:.3}, Smart {:.3}, none {:.3} [{}]",
                    ok(values_ok),
                    c(v),
                    c(s),
                    c(b),
                    ok(curtail_ok)
                ),
            )
        }
        _ => missing(6, t6, "a regime run"),
    });

    let t7 = "saturation";
    out.push(match (desk.get(&bench), desk.get(&v2g_low), desk.get(&v2g), desk.get(&v2g_high)) {
        (Some(b), Some(lo), Some(mid), Some(hi)) => {
            let first = marginal_value((b, 0), (lo, low)).unwrap();
            let last = marginal_value((mid, n), (hi, high)).unwrap();
            outcome(
                7,
                t7,
                last < first,
                format!("marginal value £/EV/yr {first:.0} at 0-{low} EVs, {last:.0} at {n}-{high} EVs"),
            )
        }
        _ => missing(7, t7, "a penetration run"),
    });

    let t8 = "FR dominance";
    out.push(match (desk.get(&bench), desk.get(&v2g), desk.get(&no_fr)) {
        (Some(b), Some(v), Some(x)) => {
            let (with, without) = (
                value_per_ev(v, b, n).unwrap(),
                value_per_ev(x, b, n).unwrap(),
            );
            let drop = (with - without) / with;
            outcome(
                8,
                t8,
                with > 0.0 && drop > 0.5,
                format!(
                    "V2G value £/EV/yr {with:.0} with FR, {without:.0} without ({:.1}% reduction)",
                    100.0 * drop
                ),
            )
        }
        _ => missing(8, t8, "a V2G run"),
    });

    let t9 = "degradation penalization";
    out.push(match (desk.get(&v2g), desk.get(&pen)) {
        (Some(np), Some(p)) => {
            let saving = np.totals.degradation_cost - p.totals.degradation_cost;
            let increase = p.totals.system_cost - np.totals.system_cost;
            let net = |l: &SimulationLedger| l.totals.system_cost + l.totals.degradation_cost;
            let (a, b, c) = (saving > 0.0, increase <= 0.05 * saving, net(p) < net(np));
            outcome(
                9,
                t9,
                a && b && c,
                format!(
                    "degradation saving £{saving:.0} [{}], system cost increase £{increase:.0} [{}], net cost {:.0} vs {:.0} [{}]",
                    ok(a),
                    ok(b),
                    net(p),
                    net(np),
                    ok(c)
                ),
            )
        }
        _ => missing(9, t9, "a penalization run"),
    });

    let failed: Vec<String> = desk
        .runs
        .iter()
        .filter(|r| r.ledger.is_none())
        .map(|r| {
            format!(
                "{}: {}",
                r.case.label(),
                r.error.as_deref().unwrap_or("no ledger")
            )
        })
        .collect();
    let violations: Vec<String> = desk
        .runs
        .iter()
        .flat_map(|r| {
            r.violations
                .iter()
                .map(move |v| format!("{}: {v}", r.case.label()))
        })
        .collect();
    out.push(outcome(
        11,
        "ledger invariants",
        failed.is_empty() && violations.is_empty(),
        if violations.is_empty() && failed.is_empty() {
            format!("{} desk runs clean", desk.runs.len())
        } else {
            format!(
                "{} violations, failed runs {:?}; first: {:?}",
                violations.len(),
                failed,
                violations.first()
            )
        },
    ));
    out
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let skip_desk = std::env::var("ACCEPTANCE_SKIP_DESK").is_ok_and(|v| v == "1");
    let mut all = Vec::new();
    for check in [
        rocof_floor,
        nadir_certification,
        degradation_model,
        brute_force,
        cuts_vs_conic,
    ] {
        let o = check();
        report(&o);
        all.push(o);
    }
    let mstg = mstg_shape();
    if skip_desk {
        for (id, title) in [
            (6, "regime ordering"),
            (7, "saturation"),
            (8, "FR dominance"),
            (9, "degradation penalization"),
        ] {
            all.push(Outcome {
                id,
                title,
                passed: None,
                detail: "desk runs skipped".into(),
            });
        }
        all.push(mstg);
        all.push(Outcome {
            id: 11,
            title: "ledger invariants",
            passed: None,
            detail: "desk runs skipped".into(),
        });
    } else {
        let desk = desk_criteria(&desk_config());
        let (before, after): (Vec<_>, Vec<_>) = desk.into_iter().partition(|o| o.id < 10);
        all.extend(before);
        all.push(mstg);
        all.extend(after);
    }
    for o in all.iter().filter(|o| o.id >= 6) {
        report(o);
    }
    let failures = all.iter().filter(|o| o.passed == Some(false)).count();
    println!(
        "acceptance: {} passed, {failures} failed, {} skipped",
        all.iter().filter(|o| o.passed == Some(true)).count(),
        all.iter().filter(|o| o.passed.is_none()).count()
    );
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
