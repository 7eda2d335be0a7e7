use std::collections::HashMap;

use chrono::NaiveDateTime;

use super::{ConstraintTag as Tag, NadirMode, SystemState, UcOptions};
use crate::error::{Error, Result};
use crate::frequency::{nadir_cut_fan, rocof_min_inertia, ConeMap, NadirCut, FR_HOLD_SECONDS};
use crate::lp::{LinExpr, Model, RotatedCone, VarId};
use crate::system::{
    aggregate_fleet, fleet_window, ChargingRegime, DemandTrace, FleetWindow, FrequencyParams,
    SystemSpec,
};
use crate::wind::{hours, ScenarioTree};

const INF: f64 = f64::INFINITY;

/// Relative tightening of the frequency rows so that solutions within the
/// solver's feasibility tolerance still pass the exact checks.
pub(crate) const FREQ_MARGIN: f64 = 1e-6;

pub(crate) fn tighten(b: f64) -> f64 {
    b + FREQ_MARGIN * b.abs().max(1.0)
}

#[derive(Debug, Clone)]
pub struct StorageVars {
    pub pc: VarId,
    pub pd: VarId,
    pub fr: VarId,
    pub e: VarId,
}

#[derive(Debug, Clone)]
pub struct EvVars {
    pub pc: VarId,
    pub pd: VarId,
    pub efr: VarId,
    pub e: VarId,
    pub q: Option<VarId>,
}

#[derive(Debug, Clone)]
pub struct NodeVars {
    pub u: Vec<VarId>,
    pub p: Vec<VarId>,
    pub pfr: Vec<VarId>,
    pub su: Vec<VarId>,
    pub sd: Vec<VarId>,
    pub storage: Vec<StorageVars>,
    pub ev: Option<EvVars>,
    pub shed: VarId,
    pub wind: VarId,
    pub h: VarId,
    pub re: VarId,
    pub rp: VarId,
}

/// A built scheduling problem: the optimization model plus the index maps
/// and node data needed to read decisions back.
#[derive(Debug, Clone)]
pub struct UcProblem {
    pub model: Model,
    pub tree: ScenarioTree,
    pub spec: SystemSpec,
    /// Frequency parameters after applying `fr_times`.
    pub freq: FrequencyParams,
    pub options: UcOptions,
    pub initial_state: SystemState,
    pub vars: Vec<NodeVars>,
    pub demand: Vec<f64>,
    pub windows: Vec<FleetWindow>,
    /// Objective weight on each node's fade variable (zero when not penalized).
    pub degradation_weight: Vec<f64>,
    /// Nadir cuts applied to every node.
    pub cuts: Vec<NadirCut>,
    /// Nadir cuts applied to a single node, indexed by node.
    pub node_cuts: Vec<Vec<NadirCut>>,
}

fn normalized(c: &NadirCut) -> [f64; 4] {
    let s = (c.a_h * c.a_h + c.a_e * c.a_e + c.a_p * c.a_p).sqrt();
    [c.a_h / s, c.a_e / s, c.a_p / s, c.b / s]
}

fn contains_cut(cuts: &[NadirCut], cut: &NadirCut) -> bool {
    let k = normalized(cut);
    cuts.iter().any(|c| {
        normalized(c)
            .iter()
            .zip(&k)
            .all(|(a, b)| (a - b).abs() < 1e-9)
    })
}

impl UcProblem {
    pub fn children(&self) -> Vec<Vec<usize>> {
        children_of(&self.tree)
    }

    fn cut_row(&mut self, n: usize, cut: &NadirCut, label: &str) {
        let v = &self.vars[n];
        let e = LinExpr::new()
            .with(v.h, cut.a_h)
            .with(v.re, cut.a_e)
            .with(v.rp, cut.a_p);
        self.model.add_row(
            format!("nadir_{label}[{n}]"),
            Tag::Eq4Nadir,
            Some(n),
            &e,
            tighten(cut.b),
            INF,
        );
    }

    /// Adds `cut` to every node unless an equivalent cut is present.
    /// The stored cut is the untightened one; its rows carry the margin.
    pub fn add_cut(&mut self, cut: NadirCut) -> bool {
        if contains_cut(&self.cuts, &cut) {
            return false;
        }
        let label = format!("cut{}", self.cuts.len());
        for n in 0..self.vars.len() {
            self.cut_row(n, &cut, &label);
        }
        self.cuts.push(cut);
        true
    }

    /// Adds `cut` at node `n` only.
    pub fn add_node_cut(&mut self, n: usize, cut: NadirCut) -> bool {
        if contains_cut(&self.cuts, &cut) || contains_cut(&self.node_cuts[n], &cut) {
            return false;
        }
        let label = format!("ncut{}", self.node_cuts[n].len());
        self.cut_row(n, &cut, &label);
        self.node_cuts[n].push(cut);
        true
    }

    pub fn cut_count(&self) -> usize {
        self.cuts.len() * self.vars.len() + self.node_cuts.iter().map(Vec::len).sum::<usize>()
    }
}

pub(crate) fn children_of(tree: &ScenarioTree) -> Vec<Vec<usize>> {
    let mut ch = vec![Vec::new(); tree.len()];
    for n in &tree.nodes {
        if let Some(p) = n.parent {
            ch[p].push(n.id);
        }
    }
    ch
}

/// SOC drop applied on the transition into a node.
fn drive_drop(spec: &SystemSpec, w: FleetWindow) -> f64 {
    if w == FleetWindow::ArrivalInstant {
        spec.fleet.c_out - spec.fleet.c_in
    } else {
        0.0
    }
}

/// Charging power of an unmanaged fleet at every node: full rate while
/// connected until `c_out` is reached.
fn unmanaged_charging(
    spec: &SystemSpec,
    tree: &ScenarioTree,
    windows: &[FleetWindow],
    e0: f64,
) -> (Vec<f64>, Vec<f64>) {
    let agg = aggregate_fleet(&spec.fleet);
    let eta = spec.fleet.efficiency;
    let mut e = vec![0.0; tree.len()];
    let mut pc = vec![0.0; tree.len()];
    for n in &tree.nodes {
        e[n.id] = match n.parent {
            None => e0,
            Some(p) => {
                e[p] + tree.nodes[p].delta_tau * eta * pc[p] / agg.energy
                    - drive_drop(spec, windows[n.id])
            }
        };
        if !windows[n.id].is_disconnected() && agg.energy > 0.0 {
            let need = (spec.fleet.c_out - e[n.id]).max(0.0) * agg.energy / (eta * n.delta_tau);
            pc[n.id] = need.min(agg.power);
        }
    }
    (pc, e)
}

fn fmt_t(t: NaiveDateTime) -> String {
    t.format("%a %Y-%m-%d %H:%M").to_string()
}

/// Reachable SOC interval along each path; errors at the first departure
/// whose requirement lies outside it.
fn check_windows(
    spec: &SystemSpec,
    tree: &ScenarioTree,
    windows: &[FleetWindow],
    e0: f64,
) -> Result<()> {
    let fleet = &spec.fleet;
    let agg = aggregate_fleet(fleet);
    if fleet.n_ev == 0 {
        return Ok(());
    }
    let eta = fleet.efficiency;
    let tol = 1e-7;
    if fleet.regime == ChargingRegime::Unmanaged {
        let (_, e) = unmanaged_charging(spec, tree, windows, e0);
        for n in &tree.nodes {
            if windows[n.id] == FleetWindow::DepartureInstant && (e[n.id] - fleet.c_out).abs() > tol
            {
                return Err(Error::InfeasibleWindow {
                    node: n.id,
                    chain: format!(
                        "unmanaged charging from SOC {e0:.4} reaches {:.4} at departure {} but c_out is {:.4}",
                        e[n.id],
                        fmt_t(n.t_ab),
                        fleet.c_out
                    ),
                });
            }
        }
        return Ok(());
    }
    let mut lo = vec![0.0; tree.len()];
    let mut hi = vec![0.0; tree.len()];
    let mut charge_steps = vec![0usize; tree.len()];
    for n in &tree.nodes {
        let (l, h, k) = match n.parent {
            None => (e0, e0, 0),
            Some(p) => {
                let pn = &tree.nodes[p];
                let connected = !windows[p].is_disconnected();
                let up = if connected {
                    pn.delta_tau * eta * agg.power / agg.energy
                } else {
                    0.0
                };
                let down = if connected && fleet.regime == ChargingRegime::V2g {
                    pn.delta_tau * agg.power / (eta * agg.energy)
                } else {
                    0.0
                };
                let drop = drive_drop(spec, windows[n.id]);
                (
                    (lo[p] - down).max(fleet.soc_min) - drop,
                    (hi[p] + up).min(fleet.soc_max) - drop,
                    charge_steps[p] + usize::from(connected),
                )
            }
        };
        lo[n.id] = l;
        hi[n.id] = h;
        charge_steps[n.id] = k;
        if windows[n.id] == FleetWindow::DepartureInstant {
            if hi[n.id] < fleet.c_out - tol || lo[n.id] > fleet.c_out + tol {
                let step = if agg.energy > 0.0 {
                    n.delta_tau * eta * agg.power / agg.energy
                } else {
                    0.0
                };
                return Err(Error::InfeasibleWindow {
                    node: n.id,
                    chain: format!(
                        "SOC {e0:.4} at {} plus at most {k} connected steps of {step:.4} gives [{:.4}, {:.4}] at departure {}, which excludes c_out = {:.4}",
                        fmt_t(tree.root().t_ab),
                        lo[n.id],
                        hi[n.id],
                        fmt_t(n.t_ab),
                        fleet.c_out
                    ),
                });
            }
            lo[n.id] = fleet.c_out;
            hi[n.id] = fleet.c_out;
            charge_steps[n.id] = 0;
        }
    }
    Ok(())
}

/// Builds the scheduling problem for `tree` starting from `state`.
pub fn build_problem(
    spec: &SystemSpec,
    tree: &ScenarioTree,
    demand: &DemandTrace,
    state: &SystemState,
    options: &UcOptions,
) -> Result<UcProblem> {
    tree.check_invariants()?;
    if state.units.len() != spec.generators.len() || state.storage_soc.len() != spec.storages.len()
    {
        return Err(Error::InvalidInput(
            "state does not match the system specification".into(),
        ));
    }
    for (g, u) in spec.generators.iter().zip(&state.units) {
        if u.online > g.units {
            return Err(Error::InvalidInput(format!(
                "{}: {} units online of {}",
                g.name, u.online, g.units
            )));
        }
    }
    let fleet = &spec.fleet;
    let agg = aggregate_fleet(fleet);
    let has_fleet = fleet.n_ev > 0;
    if has_fleet && !(fleet.soc_min - 1e-9..=fleet.soc_max + 1e-9).contains(&state.ev_soc) {
        return Err(Error::InvalidInput(format!(
            "fleet SOC {} outside bounds",
            state.ev_soc
        )));
    }
    if state
        .storage_soc
        .iter()
        .any(|s| !(-1e-9..=1.0 + 1e-9).contains(s))
    {
        return Err(Error::InvalidInput("storage SOC outside [0, 1]".into()));
    }
    let mut freq = spec.freq;
    if let Some((t_e, t_p)) = options.fr_times {
        freq.t_e = t_e;
        freq.t_p = t_p;
    }
    freq.validate()?;

    let windows: Vec<FleetWindow> = tree
        .nodes
        .iter()
        .map(|n| fleet_window(fleet, &spec.calendar, n.t_ab))
        .collect();
    if has_fleet {
        check_windows(spec, tree, &windows, state.ev_soc)?;
    }
    let forced = if has_fleet && fleet.regime == ChargingRegime::Unmanaged {
        Some(unmanaged_charging(spec, tree, &windows, state.ev_soc).0)
    } else {
        None
    };
    let demand_at: Vec<f64> = tree.nodes.iter().map(|n| demand.at(n.t_ab)).collect();
    let children = children_of(tree);
    let root_t = tree.root().t_ab;

    let mut m = Model::default();
    let mut vars: Vec<NodeVars> = Vec::with_capacity(tree.len());
    let mut degradation_weight = vec![0.0; tree.len()];

    // variables
    for n in &tree.nodes {
        let pi = n.pi;
        let dt = n.delta_tau;
        let id = n.id;
        let integer = options.integer_depth.map_or(true, |d| n.depth <= d);
        let mut nv = NodeVars {
            u: vec![],
            p: vec![],
            pfr: vec![],
            su: vec![],
            sd: vec![],
            storage: vec![],
            ev: None,
            shed: m.add_var(
                format!("shed[{id}]"),
                0.0,
                INF,
                false,
                pi * dt * 1000.0 * spec.voll,
            ),
            wind: m.add_var(format!("wind[{id}]"), 0.0, n.wind_available, false, 0.0),
            h: m.add_var(format!("h[{id}]"), -INF, INF, false, 0.0),
            re: m.add_var(format!("re[{id}]"), 0.0, INF, false, 0.0),
            rp: m.add_var(format!("rp[{id}]"), 0.0, INF, false, 0.0),
        };
        for g in &spec.generators {
            let count = g.units as f64;
            let lb = if g.must_run { count } else { 0.0 };
            nv.u.push(m.add_var(
                format!("u_{}[{id}]", g.name),
                lb,
                count,
                integer,
                pi * dt * g.no_load_cost,
            ));
            nv.p.push(m.add_var(
                format!("p_{}[{id}]", g.name),
                0.0,
                g.total_capacity(),
                false,
                pi * dt * 1000.0 * g.marginal_cost,
            ));
            nv.pfr.push(m.add_var(
                format!("pfr_{}[{id}]", g.name),
                0.0,
                g.total_capacity(),
                false,
                0.0,
            ));
            nv.su.push(m.add_var(
                format!("su_{}[{id}]", g.name),
                0.0,
                count,
                false,
                pi * g.startup_cost,
            ));
            nv.sd
                .push(m.add_var(format!("sd_{}[{id}]", g.name), 0.0, count, false, 0.0));
        }
        for (k, s) in spec.storages.iter().enumerate() {
            let (elb, eub) = if n.parent.is_none() {
                (state.storage_soc[k], state.storage_soc[k])
            } else {
                (0.0, 1.0)
            };
            nv.storage.push(StorageVars {
                pc: m.add_var(
                    format!("pc_{}[{id}]", s.name),
                    0.0,
                    s.power_capacity,
                    false,
                    0.0,
                ),
                pd: m.add_var(
                    format!("pd_{}[{id}]", s.name),
                    0.0,
                    s.power_capacity,
                    false,
                    0.0,
                ),
                fr: m.add_var(
                    format!("fr_{}[{id}]", s.name),
                    0.0,
                    s.fr_limit(),
                    false,
                    0.0,
                ),
                e: m.add_var(format!("e_{}[{id}]", s.name), elb, eub, false, 0.0),
            });
        }
        if has_fleet {
            let (elb, eub) = if n.parent.is_none() {
                (state.ev_soc, state.ev_soc)
            } else {
                (fleet.soc_min, fleet.soc_max)
            };
            let q = if options.penalize_degradation {
                let w = pi * dt * spec.degradation.c_d * fleet.n_ev as f64;
                degradation_weight[id] = w;
                Some(m.add_var(format!("q_ev[{id}]"), 0.0, INF, false, w))
            } else {
                None
            };
            nv.ev = Some(EvVars {
                pc: m.add_var(format!("pc_ev[{id}]"), 0.0, agg.power, false, 0.0),
                pd: m.add_var(format!("pd_ev[{id}]"), 0.0, agg.power, false, 0.0),
                efr: m.add_var(format!("efr_ev[{id}]"), 0.0, 2.0 * agg.power, false, 0.0),
                e: m.add_var(format!("e_ev[{id}]"), elb, eub, false, 0.0),
                q,
            });
        }
        vars.push(nv);
    }

    // commitment groups implied by lead times
    let mut lead_groups: HashMap<(usize, usize, usize), VarId> = HashMap::new();

    for n in &tree.nodes {
        let id = n.id;
        let v = &vars[id];
        let dt = n.delta_tau;
        let node = Some(id);

        // power balance
        let mut bal = LinExpr::new();
        for &p in &v.p {
            bal.add(p, 1.0);
        }
        bal.add(v.wind, 1.0).add(v.shed, 1.0);
        for s in &v.storage {
            bal.add(s.pd, 1.0).add(s.pc, -1.0);
        }
        if let Some(ev) = &v.ev {
            bal.add(ev.pd, 1.0).add(ev.pc, -1.0);
        }
        m.add_row(
            format!("balance[{id}]"),
            Tag::Balance,
            node,
            &bal,
            demand_at[id],
            demand_at[id],
        );

        // thermal logic
        for (gi, g) in spec.generators.iter().enumerate() {
            let (u, p, su, sd) = (v.u[gi], v.p[gi], v.su[gi], v.sd[gi]);
            let hist = &state.units[gi];
            m.add_row(
                format!("msg_{}[{id}]", g.name),
                Tag::ThermalLogic,
                node,
                &LinExpr::var(p).with(u, -g.msg),
                0.0,
                INF,
            );
            m.add_row(
                format!("cap_{}[{id}]", g.name),
                Tag::ThermalLogic,
                node,
                &LinExpr::var(p).with(u, -g.capacity),
                -INF,
                0.0,
            );
            let (mut up, mut down) = (
                LinExpr::var(su).with(u, -1.0),
                LinExpr::var(sd).with(u, 1.0),
            );
            match n.parent {
                Some(par) => {
                    up.add(vars[par].u[gi], 1.0);
                    down.add(vars[par].u[gi], -1.0);
                }
                None => {
                    up.constant += hist.online as f64;
                    down.constant -= hist.online as f64;
                }
            }
            m.add_row(
                format!("startup_{}[{id}]", g.name),
                Tag::ThermalLogic,
                node,
                &up,
                0.0,
                INF,
            );
            m.add_row(
                format!("shutdown_{}[{id}]", g.name),
                Tag::ThermalLogic,
                node,
                &down,
                0.0,
                INF,
            );

            for (min_time, is_up) in [(g.min_up, true), (g.min_down, false)] {
                let k = (min_time / dt - 1e-9).ceil().max(0.0) as usize;
                if k <= 1 {
                    continue;
                }
                let mut e = LinExpr::new();
                let mut path = vec![id];
                path.extend(tree.ancestors(id).map(|a| a.id));
                for &a in path.iter().take(k) {
                    e.add(
                        if is_up {
                            vars[a].su[gi]
                        } else {
                            vars[a].sd[gi]
                        },
                        1.0,
                    );
                }
                let from_history = k.saturating_sub(path.len());
                let past = if is_up {
                    &hist.startups
                } else {
                    &hist.shutdowns
                };
                let carried: u32 = past.iter().rev().take(from_history).sum();
                e.constant += carried as f64;
                if is_up {
                    e.add(u, -1.0);
                    m.add_row(
                        format!("minup_{}[{id}]", g.name),
                        Tag::ThermalLogic,
                        node,
                        &e,
                        -INF,
                        0.0,
                    );
                } else {
                    e.add(u, 1.0);
                    m.add_row(
                        format!("mindown_{}[{id}]", g.name),
                        Tag::ThermalLogic,
                        node,
                        &e,
                        -INF,
                        g.units as f64,
                    );
                }
            }

            if g.commitment_lead > 0.0 {
                let decided_at = n.t_ab - hours(g.commitment_lead);
                if decided_at < root_t {
                    if let Some(&planned) = hist.planned.get(&n.t_ab) {
                        let planned = (planned as f64).clamp(
                            if g.must_run { g.units as f64 } else { 0.0 },
                            g.units as f64,
                        );
                        m.add_row(
                            format!("lead_{}[{id}]", g.name),
                            Tag::ThermalLogic,
                            node,
                            &LinExpr::var(u),
                            planned,
                            planned,
                        );
                    }
                }
                let anchor = std::iter::once(n)
                    .chain(tree.ancestors(id))
                    .find(|a| a.t_ab <= decided_at)
                    .map_or(0, |a| a.id);
                match lead_groups.get(&(gi, n.depth, anchor)) {
                    Some(&first) => {
                        m.add_row(
                            format!("lead_{}[{id}]", g.name),
                            Tag::ThermalLogic,
                            node,
                            &LinExpr::var(u).with(first, -1.0),
                            0.0,
                            0.0,
                        );
                    }
                    None => {
                        lead_groups.insert((gi, n.depth, anchor), u);
                    }
                }
            }

            // PFR from headroom
            let mut hr = LinExpr::var(v.pfr[gi]);
            hr.add(u, -g.max_pfr_share * g.capacity)
                .add(p, g.max_pfr_share);
            m.add_row(
                format!("pfr_headroom_{}[{id}]", g.name),
                Tag::FrHeadroom,
                node,
                &hr,
                -INF,
                0.0,
            );
        }

        // storage
        let hold_h = FR_HOLD_SECONDS / 3600.0;
        for (k, s) in spec.storages.iter().enumerate() {
            let sv = &v.storage[k];
            let mut next = LinExpr::var(sv.e);
            next.add(sv.pc, dt * s.efficiency / s.energy_capacity)
                .add(sv.pd, -dt / (s.efficiency * s.energy_capacity));
            if children[id].is_empty() {
                m.add_row(
                    format!("soc_end_{}[{id}]", s.name),
                    Tag::StorageDynamics,
                    node,
                    &next,
                    0.0,
                    1.0,
                );
            }
            for &c in &children[id] {
                let mut e = next.clone();
                e.add(vars[c].storage[k].e, -1.0);
                m.add_row(
                    format!("soc_{}[{c}]", s.name),
                    Tag::StorageDynamics,
                    Some(c),
                    &e,
                    0.0,
                    0.0,
                );
            }
            let mut hr = LinExpr::var(sv.fr);
            hr.add(sv.pd, 1.0).add(sv.pc, -1.0);
            m.add_row(
                format!("fr_headroom_{}[{id}]", s.name),
                Tag::FrHeadroom,
                node,
                &hr,
                -INF,
                s.power_capacity,
            );
            let energy = LinExpr::var(sv.e).with(sv.fr, -hold_h / s.energy_capacity);
            m.add_row(
                format!("fr_energy_{}[{id}]", s.name),
                Tag::StorageDynamics,
                node,
                &energy,
                0.0,
                INF,
            );
        }

        // fleet
        if let Some(ev) = &v.ev {
            let w = windows[id];
            let mut next = LinExpr::var(ev.e);
            next.add(ev.pc, dt * fleet.efficiency / agg.energy)
                .add(ev.pd, -dt / (fleet.efficiency * agg.energy));
            if children[id].is_empty() {
                m.add_row(
                    format!("soc_end_ev[{id}]"),
                    Tag::StorageDynamics,
                    node,
                    &next,
                    fleet.soc_min,
                    fleet.soc_max,
                );
            }
            for &c in &children[id] {
                let mut e = next.clone();
                e.add(vars[c].ev.as_ref().expect("fleet vars").e, -1.0);
                e.constant -= drive_drop(spec, windows[c]);
                m.add_row(
                    format!("soc_ev[{c}]"),
                    Tag::StorageDynamics,
                    Some(c),
                    &e,
                    0.0,
                    0.0,
                );
            }
            if w.is_disconnected() {
                for (name, x) in [("pc", ev.pc), ("pd", ev.pd), ("efr", ev.efr)] {
                    m.add_row(
                        format!("away_{name}[{id}]"),
                        Tag::EvWindow,
                        node,
                        &LinExpr::var(x),
                        0.0,
                        0.0,
                    );
                }
            }
            if w == FleetWindow::DepartureInstant {
                m.add_row(
                    format!("departure[{id}]"),
                    Tag::EvDeparture,
                    node,
                    &LinExpr::var(ev.e),
                    fleet.c_out,
                    fleet.c_out,
                );
            }
            if fleet.regime != ChargingRegime::V2g {
                m.add_row(
                    format!("no_discharge[{id}]"),
                    Tag::EvWindow,
                    node,
                    &LinExpr::var(ev.pd),
                    0.0,
                    0.0,
                );
            }
            if !fleet.offers_fr() {
                m.add_row(
                    format!("no_efr[{id}]"),
                    Tag::EvWindow,
                    node,
                    &LinExpr::var(ev.efr),
                    0.0,
                    0.0,
                );
            }
            if let Some(pc) = &forced {
                m.add_row(
                    format!("forced_charge[{id}]"),
                    Tag::EvWindow,
                    node,
                    &LinExpr::var(ev.pc),
                    pc[id],
                    pc[id],
                );
            }
            match fleet.regime {
                ChargingRegime::V2g => {
                    let mut hr = LinExpr::var(ev.efr);
                    hr.add(ev.pd, 1.0).add(ev.pc, -1.0);
                    m.add_row(
                        format!("efr_headroom_ev[{id}]"),
                        Tag::FrHeadroom,
                        node,
                        &hr,
                        -INF,
                        agg.power,
                    );
                    let energy = LinExpr::var(ev.e).with(ev.efr, -hold_h / agg.energy);
                    m.add_row(
                        format!("efr_energy_ev[{id}]"),
                        Tag::StorageDynamics,
                        node,
                        &energy,
                        fleet.soc_min,
                        INF,
                    );
                }
                ChargingRegime::Smart => {
                    m.add_row(
                        format!("efr_headroom_ev[{id}]"),
                        Tag::FrHeadroom,
                        node,
                        &LinExpr::var(ev.efr).with(ev.pc, -1.0),
                        -INF,
                        0.0,
                    );
                }
                ChargingRegime::Unmanaged => {}
            }
            if let Some(q) = ev.q {
                let d = &spec.degradation;
                m.add_row(
                    format!("fade_a[{id}]"),
                    Tag::DegradationCuts,
                    node,
                    &LinExpr::var(q).with(ev.e, -d.alpha1),
                    d.alpha2,
                    INF,
                );
                m.add_row(
                    format!("fade_b[{id}]"),
                    Tag::DegradationCuts,
                    node,
                    &LinExpr::var(q).with(ev.e, -d.beta1),
                    d.beta2,
                    INF,
                );
            }
        }

        // frequency quantities
        let mut h = LinExpr::var(v.h);
        for (gi, g) in spec.generators.iter().enumerate() {
            h.add(v.u[gi], -g.inertia_constant * g.capacity);
        }
        m.add_row(
            format!("inertia[{id}]"),
            Tag::Eq2Rocof,
            node,
            &h,
            -freq.lost_infeed_inertia,
            -freq.lost_infeed_inertia,
        );
        let mut re = LinExpr::var(v.re);
        let mut rp = LinExpr::var(v.rp);
        for &x in &v.pfr {
            rp.add(x, -1.0);
        }
        for (k, s) in spec.storages.iter().enumerate() {
            match s.service {
                crate::system::FrService::Efr => re.add(v.storage[k].fr, -1.0),
                crate::system::FrService::Pfr => rp.add(v.storage[k].fr, -1.0),
            };
        }
        if let Some(ev) = &v.ev {
            re.add(ev.efr, -1.0);
        }
        m.add_row(
            format!("efr_total[{id}]"),
            Tag::Eq3SteadyState,
            node,
            &re,
            0.0,
            0.0,
        );
        m.add_row(
            format!("pfr_total[{id}]"),
            Tag::Eq3SteadyState,
            node,
            &rp,
            0.0,
            0.0,
        );

        if spec.reserve.enabled {
            let mut e = LinExpr::new();
            for (gi, g) in spec.generators.iter().enumerate() {
                e.add(v.u[gi], g.capacity).add(v.p[gi], -1.0);
            }
            m.add_row(
                format!("reserve[{id}]"),
                Tag::FrHeadroom,
                node,
                &e,
                freq.p_l + spec.reserve.wind_margin,
                INF,
            );
        }

        if options.frequency_constraints {
            m.add_row(
                format!("rocof[{id}]"),
                Tag::Eq2Rocof,
                node,
                &LinExpr::var(v.h),
                tighten(rocof_min_inertia(&freq)),
                INF,
            );
            m.add_row(
                format!("steady[{id}]"),
                Tag::Eq3SteadyState,
                node,
                &LinExpr::var(v.re).with(v.rp, 1.0),
                tighten(freq.p_l),
                INF,
            );
            let cm = ConeMap::new(&freq);
            let x1 = LinExpr::new().with(v.h, cm.inv_f0).with(v.re, -cm.k_e);
            match options.nadir_mode {
                NadirMode::Conic => {
                    let ya = m.add_var(format!("nadir_y[{id}]"), 0.0, INF, false, 0.0);
                    let e = LinExpr::var(ya).with(v.re, cm.k_y);
                    m.add_row(
                        format!("nadir_y[{id}]"),
                        Tag::Eq4Nadir,
                        node,
                        &e,
                        tighten(cm.k_y * freq.p_l),
                        INF,
                    );
                    m.add_cone(RotatedCone {
                        name: format!("nadir[{id}]"),
                        tag: Tag::Eq4Nadir,
                        node,
                        x1,
                        x2: LinExpr::var(v.rp),
                        y: LinExpr::var(ya),
                    });
                }
                NadirMode::Cuts => {
                    m.add_row(
                        format!("nadir_x1[{id}]"),
                        Tag::Eq4Nadir,
                        node,
                        &x1,
                        tighten(0.0),
                        INF,
                    );
                }
            }
        }
    }

    let mut problem = UcProblem {
        model: m,
        tree: tree.clone(),
        spec: spec.clone(),
        freq,
        options: options.clone(),
        initial_state: state.clone(),
        vars,
        demand: demand_at,
        windows,
        degradation_weight,
        cuts: Vec::new(),
        node_cuts: vec![Vec::new(); tree.len()],
    };
    if options.frequency_constraints && options.nadir_mode == NadirMode::Cuts {
        for cut in nadir_cut_fan(&freq, options.initial_cuts, 0.02, 50.0) {
            problem.add_cut(cut);
        }
    }
    Ok(problem)
}
