//! Self-checks run by `evsuc validate`: analytic values, the nadir condition
//! against a time-domain simulation, the fade model, MSTG shape, and one
//! scheduling step of the configured system.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::degradation::{fade_cubic, fade_linear};
use crate::frequency::{
    analytic_nadir, min_nadir_inertia, mstg_curve, nadir_ok, rocof_min_inertia, swing_nadir_oracle,
    FrState,
};
use crate::lp::{SolveOptions, SolverBackend};
use crate::system::FrequencyParams;
use crate::uc::{build_problem, check_solution, solve, SystemState};
use crate::wind::build_tree;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

pub fn rocof_floor() -> Check {
    let h = rocof_min_inertia(&FrequencyParams::gb());
    check("rocof_floor", h == 45.0, format!("{h} GWs"))
}

pub fn nadir_boundary_points() -> Check {
    let gb = FrequencyParams::gb();
    let slow = min_nadir_inertia(0.0, 1.8, &gb);
    let fast = min_nadir_inertia(0.0, 1.8, &FrequencyParams { t_p: 1.0, ..gb });
    let ok = (slow - 281.25).abs() < 281.25e-6 && (fast - 28.125).abs() < 28.125e-6;
    check(
        "nadir_boundary_points",
        ok,
        format!("t=10s: {slow:.6} GWs, t=1s: {fast:.6} GWs"),
    )
}

/// Random states of the configured system; agreement is required except
/// within 0.1 % of the frequency limit.
pub fn nadir_vs_oracle(freq: &FrequencyParams, samples: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_floor = rocof_min_inertia(freq);
    let mut disagreements = 0;
    let mut compared = 0;
    for _ in 0..samples {
        let r_e = rng.gen_range(0.0..freq.p_l);
        let r_p = rng.gen_range((freq.p_l - r_e)..(2.0 * freq.p_l));
        let h = rng.gen_range(h_floor..(10.0 * h_floor.max(1e-3)));
        let s = FrState { h, r_e, r_p };
        let nadir = match swing_nadir_oracle(&s, freq, 1e-3) {
            Ok(n) => n,
            Err(_) => continue,
        };
        if (nadir - freq.delta_f_max).abs() <= 1e-3 * freq.delta_f_max {
            continue;
        }
        compared += 1;
        if nadir_ok(&s, freq) != (nadir <= freq.delta_f_max) {
            disagreements += 1;
        }
    }
    check(
        "nadir_vs_swing_oracle",
        disagreements == 0,
        format!("{disagreements} disagreements in {compared} states"),
    )
}

pub fn analytic_vs_oracle(freq: &FrequencyParams) -> Check {
    let s = FrState {
        h: 2.0 * rocof_min_inertia(freq),
        r_e: 0.3 * freq.p_l,
        r_p: freq.p_l,
    };
    let a = analytic_nadir(&s, freq);
    let o = swing_nadir_oracle(&s, freq, 1e-3).unwrap_or(f64::NAN);
    check(
        "analytic_nadir",
        (a - o).abs() <= 1e-4 * a.max(1e-9),
        format!("analytic {a:.6} Hz, simulated {o:.6} Hz"),
    )
}

pub fn degradation_shape(cfg: &RunConfig) -> Vec<Check> {
    let p = &cfg.system.degradation;
    let (lo, hi) = (cfg.system.fleet.soc_min, cfg.system.fleet.soc_max);
    let ratio = fade_cubic(lo, p).q_l / fade_cubic(hi, p).q_l;
    let mid = 0.5 * (fade_cubic(lo, p).q_l + fade_cubic(hi, p).q_l);
    let at_omega = fade_cubic(p.omega, p).q_l;
    let worst = (0..1000)
        .map(|i| lo + (hi - lo) * i as f64 / 999.0)
        .map(|s| fade_linear(s, p).q_l - fade_cubic(s, p).q_l)
        .fold(f64::NEG_INFINITY, f64::max);
    vec![
        check(
            "fade_ratio",
            (ratio - 0.45).abs() <= 0.005,
            format!("{ratio:.4}"),
        ),
        check(
            "fade_shoulder_midpoint",
            (at_omega - mid).abs() <= 0.01 * mid,
            format!("{at_omega:.4e} vs {mid:.4e}"),
        ),
        check(
            "fade_linear_excess",
            worst <= 5e-6,
            format!("max linear minus cubic {worst:.3e} %/h"),
        ),
    ]
}

pub fn mstg_shape(cfg: &RunConfig) -> Check {
    let freq = &cfg.system.freq;
    let m = &cfg.mstg;
    let grid: Vec<f64> = (0..=80)
        .map(|i| freq.p_l * (1.0 + 3.0 * i as f64 / 80.0))
        .collect();
    let slow = mstg_curve(
        freq,
        m.avg_inertia_constant,
        m.msg_fraction,
        freq.t_p,
        &grid,
    );
    let fast = mstg_curve(
        freq,
        m.avg_inertia_constant,
        m.msg_fraction,
        freq.t_e,
        &grid,
    );
    let (Ok(slow), Ok(fast)) = (slow, fast) else {
        return check("mstg_shape", false, "curve computation failed".into());
    };
    let floor = m.msg_fraction * rocof_min_inertia(freq) / m.avg_inertia_constant;
    let vals: Vec<f64> = slow.iter().filter_map(|p| p.mstg).collect();
    let mut ok = true;
    for w in vals.windows(2) {
        let at_floor = (w[1] - floor).abs() < 1e-12;
        if !(w[1] < w[0]
            || (at_floor && (w[0] - floor).abs() < 1e-12)
            || (at_floor && w[1] <= w[0]))
        {
            ok = false;
        }
    }
    for (s, f) in slow.iter().zip(&fast) {
        if let (Some(s), Some(f)) = (s.mstg, f.mstg) {
            ok &= f <= s + 1e-12;
        }
    }
    check(
        "mstg_shape",
        ok,
        format!("{} points, floor {floor:.4} GW", vals.len()),
    )
}

/// One scheduling step of the configured system from its initial state.
pub fn uc_step(cfg: &RunConfig, backend: &dyn SolverBackend) -> Check {
    let spec = &cfg.system;
    let o = &cfg.simulation.options;
    let run = || -> crate::Result<String> {
        let steps = (o.horizon / o.step).round() as usize + 1;
        let demand = spec.demand.trace(o.start, steps, &spec.calendar)?;
        let wind0 = 0.4 * spec.wind.installed_capacity;
        let state = SystemState::initial(spec, o.start, wind0);
        let tree = build_tree(&spec.wind, wind0, o.start, &o.quantiles, o.horizon, o.step)?;
        let mut problem = build_problem(spec, &tree, &demand, &state, &o.uc)?;
        let sol = solve(
            &mut problem,
            backend,
            &SolveOptions {
                relative_gap: o.relative_gap,
                time_limit: o.time_limit,
            },
        )?;
        let c = check_solution(&problem, &sol);
        if c.passes(1e-6) {
            Ok(format!(
                "{} nodes, objective {:.1}",
                tree.len(),
                sol.objective
            ))
        } else {
            Err(crate::Error::Solver(format!(
                "solution check failed: {c:?}"
            )))
        }
    };
    match run() {
        Ok(d) => check("uc_step", true, d),
        Err(e) => check("uc_step", false, e.to_string()),
    }
}

pub fn run_all(cfg: &RunConfig, backend: &dyn SolverBackend) -> Vec<Check> {
    let freq = &cfg.system.freq;
    let mut out = vec![
        rocof_floor(),
        nadir_boundary_points(),
        nadir_vs_oracle(freq, 200, 7),
        analytic_vs_oracle(freq),
    ];
    out.extend(degradation_shape(cfg));
    out.push(mstg_shape(cfg));
    out.push(uc_step(cfg, backend));
    out
}
