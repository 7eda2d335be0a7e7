use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::build::children_of;
use super::{ConstraintTag, NadirMode, NodeDecision, StorageDecision, UcProblem};
use crate::degradation::fade_linear;
use crate::error::{Error, Result};
use crate::frequency::{
    nadir_ok, nadir_violation, rocof_ok, separating_cut, steady_state_ok, NadirCut, FR_HOLD_SECONDS,
};
use crate::lp::{
    BackendError, LpSession, LpSolution, Model, SolveOptions, SolveStatus, SolverBackend,
};
use crate::system::{aggregate_fleet, ChargingRegime, FleetWindow, FrService, SystemSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UcSolution {
    pub decisions: Vec<NodeDecision>,
    /// Full objective (£), including the degradation term when penalized.
    pub objective: f64,
    /// Expected degradation cost carried in the objective (£).
    pub degradation_penalty: f64,
    pub status: SolveStatus,
    pub gap: f64,
    pub cut_rounds: usize,
    pub cuts: usize,
    #[serde(skip)]
    pub values: Vec<f64>,
}

impl UcSolution {
    /// Objective without the degradation term.
    pub fn system_cost(&self) -> f64 {
        self.objective - self.degradation_penalty
    }

    pub fn root(&self) -> &NodeDecision {
        &self.decisions[0]
    }
}

/// Node cuts carried from one rolling-horizon step to the next, keyed by
/// tree depth. A cut found at depth `d` is reapplied at depth `d - 1` of the
/// following tree, on every branch.
#[derive(Debug, Clone, Default)]
pub struct CutPool {
    pub by_depth: BTreeMap<usize, Vec<NadirCut>>,
}

/// Most recent cuts kept per depth.
const POOL_PER_DEPTH: usize = 4;

impl CutPool {
    pub fn apply(&self, problem: &mut UcProblem) {
        if problem.options.nadir_mode != NadirMode::Cuts || !problem.options.frequency_constraints {
            return;
        }
        let depths: Vec<usize> = problem.tree.nodes.iter().map(|n| n.depth).collect();
        for (n, d) in depths.into_iter().enumerate() {
            if let Some(cuts) = self.by_depth.get(&(d + 1)) {
                for c in cuts {
                    problem.add_node_cut(n, *c);
                }
            }
        }
    }

    pub fn absorb(&mut self, problem: &UcProblem) {
        for (n, cuts) in problem.node_cuts.iter().enumerate() {
            let slot = self
                .by_depth
                .entry(problem.tree.nodes[n].depth)
                .or_default();
            for c in cuts {
                if !slot.contains(c) {
                    slot.push(*c);
                }
            }
            if slot.len() > POOL_PER_DEPTH {
                slot.drain(..slot.len() - POOL_PER_DEPTH);
            }
        }
    }
}

fn decode(problem: &UcProblem, x: &[f64]) -> Vec<NodeDecision> {
    let spec = &problem.spec;
    let val = |v: crate::lp::VarId| x[v.0];
    problem
        .tree
        .nodes
        .iter()
        .map(|n| {
            let v = &problem.vars[n.id];
            let commitment: Vec<f64> =
                v.u.iter()
                    .map(|&u| {
                        let raw = val(u);
                        if problem.model.vars[u.0].integer {
                            raw.round()
                        } else {
                            raw
                        }
                    })
                    .collect();
            let parent_u: Vec<f64> = match n.parent {
                Some(p) => problem.vars[p].u.iter().map(|&u| val(u).round()).collect(),
                None => problem
                    .initial_state
                    .units
                    .iter()
                    .map(|h| h.online as f64)
                    .collect(),
            };
            let storage = v
                .storage
                .iter()
                .map(|s| StorageDecision {
                    charge: val(s.pc).max(0.0),
                    discharge: val(s.pd).max(0.0),
                    fr: val(s.fr).max(0.0),
                    soc: val(s.e),
                })
                .collect();
            let ev =
                v.ev.as_ref()
                    .map(|e| StorageDecision {
                        charge: val(e.pc).max(0.0),
                        discharge: val(e.pd).max(0.0),
                        fr: val(e.efr).max(0.0),
                        soc: val(e.e),
                    })
                    .unwrap_or_default();
            let wind_used = val(v.wind).clamp(0.0, n.wind_available);
            let window = problem.windows[n.id];
            NodeDecision {
                node: n.id,
                t_ab: n.t_ab,
                pi: n.pi,
                delta_tau: n.delta_tau,
                output: v.p.iter().map(|&p| val(p).max(0.0)).collect(),
                pfr: v.pfr.iter().map(|&p| val(p).max(0.0)).collect(),
                startups: commitment
                    .iter()
                    .zip(&parent_u)
                    .map(|(u, p)| (u - p).max(0.0))
                    .collect(),
                shutdowns: commitment
                    .iter()
                    .zip(&parent_u)
                    .map(|(u, p)| (p - u).max(0.0))
                    .collect(),
                commitment,
                storage,
                ev,
                ev_connected: spec.fleet.n_ev > 0 && !window.is_disconnected(),
                load_shed: val(v.shed).max(0.0),
                demand: problem.demand[n.id],
                wind_available: n.wind_available,
                wind_used,
                wind_curtailed: n.wind_available - wind_used,
                inertia: val(v.h),
                r_e: val(v.re),
                r_p: val(v.rp),
                fade: if spec.fleet.n_ev > 0 {
                    fade_linear(ev.soc, &spec.degradation).q_l
                } else {
                    0.0
                },
            }
        })
        .collect()
}

fn map_backend(backend: &dyn SolverBackend, e: BackendError) -> Error {
    match e {
        BackendError::Unsupported(reason) => Error::Unsupported {
            backend: backend.name().into(),
            reason,
        },
        BackendError::LimitWithoutSolution => Error::Timeout { gap: f64::INFINITY },
        BackendError::Unbounded => Error::Solver("problem is unbounded".into()),
        BackendError::Infeasible => Error::Solver("infeasible".into()),
        BackendError::Failed(m) => Error::Solver(m),
    }
}

fn is_infeasible(model: &Model, backend: &dyn SolverBackend, opts: &SolveOptions) -> bool {
    matches!(backend.solve(model, opts), Err(BackendError::Infeasible))
}

/// Deletion filter over constraint families: drops every family whose
/// removal keeps the model infeasible.
fn irreducible_tags(
    model: &Model,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Vec<ConstraintTag> {
    let all = model.tags();
    let mut dropped = BTreeSet::new();
    for t in &all {
        let mut trial = dropped.clone();
        trial.insert(*t);
        if is_infeasible(&model.without_tags(&trial), backend, opts) {
            dropped = trial;
        }
    }
    all.difference(&dropped).copied().collect()
}

/// Continuous solves of a model derived from `problem.model` that pick up
/// cut rows appended to it, warm-started when the backend allows.
struct Follower {
    session: Option<Box<dyn LpSession>>,
    model: Model,
    synced: usize,
}

impl Follower {
    fn new(model: Model, backend: &dyn SolverBackend, opts: &SolveOptions) -> Self {
        Self {
            session: backend.lp_session(&model, opts),
            synced: model.rows.len(),
            model,
        }
    }

    fn solve(
        &mut self,
        problem: &UcProblem,
        backend: &dyn SolverBackend,
        opts: &SolveOptions,
    ) -> std::result::Result<LpSolution, BackendError> {
        for r in &problem.model.rows[self.synced..] {
            match &mut self.session {
                Some(s) => s.add_row(r),
                None => self.model.rows.push(r.clone()),
            }
        }
        self.synced = problem.model.rows.len();
        match &mut self.session {
            Some(s) => s.solve(),
            None => backend.solve(&self.model, opts),
        }
    }
}

/// Cut rounds on the continuous relaxation, which are cheap and remove
/// most insecure regions before the integer solves.
fn relaxation_cuts(problem: &mut UcProblem, backend: &dyn SolverBackend, opts: &SolveOptions) {
    let mut lp = Follower::new(problem.model.relaxed(), backend, opts);
    for round in 0..problem.options.max_cut_rounds {
        let Ok(sol) = lp.solve(problem, backend, opts) else {
            return;
        };
        let decisions = decode(problem, &sol.values);
        let (added, _) = add_separating_cuts(problem, &decisions);
        log::debug!("relaxation cut round {round}: {added} cuts");
        if added == 0 {
            return;
        }
    }
}

/// Solves the problem. In cuts mode, separating nadir cuts are added until
/// every node passes the exact nadir check; `problem.cuts` holds the final
/// cut set afterwards.
pub fn solve(
    problem: &mut UcProblem,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Result<UcSolution> {
    let caps = backend.capabilities();
    let conic = !problem.model.cones.is_empty();
    if (conic && !caps.mixed_integer_conic) || (!conic && !caps.mixed_integer_linear) {
        return Err(Error::Unsupported {
            backend: backend.name().into(),
            reason: if conic {
                "conic nadir mode needs a mixed-integer conic backend; use cuts mode".into()
            } else {
                "backend cannot solve mixed-integer linear programs".into()
            },
        });
    }
    let cut_loop =
        problem.options.nadir_mode == NadirMode::Cuts && problem.options.frequency_constraints;
    let integer = problem.model.has_integers();
    let started = std::time::Instant::now();
    if cut_loop && integer {
        relaxation_cuts(problem, backend, opts);
        log::debug!(
            "relaxation cuts done after {:.2}s",
            started.elapsed().as_secs_f64()
        );
    }
    let mut rounds = 0;
    loop {
        let lp: LpSolution = match backend.solve(&problem.model, opts) {
            Ok(s) => s,
            Err(BackendError::Infeasible) => {
                return Err(Error::Infeasible {
                    tags: irreducible_tags(&problem.model, backend, opts),
                })
            }
            Err(e) => return Err(map_backend(backend, e)),
        };
        log::debug!(
            "solve done after {:.2}s, gap {:.2e}",
            started.elapsed().as_secs_f64(),
            lp.gap
        );
        let decisions = decode(problem, &lp.values);
        if !cut_loop {
            return Ok(finish(problem, decisions, lp, rounds));
        }
        let (added, worst) = if rounds < problem.options.max_cut_rounds {
            add_separating_cuts(problem, &decisions)
        } else {
            (0, worst_violation(problem, &decisions))
        };
        if worst == 0.0 {
            return Ok(finish(problem, decisions, lp, rounds));
        }
        if added == 0 {
            if worst <= problem.options.cut_tolerance {
                log::warn!("accepting nadir violation {worst:.2e} after {rounds} cut rounds");
                return Ok(finish(problem, decisions, lp, rounds));
            }
            return Err(Error::CutLoop {
                iterations: rounds,
                violation: worst,
            });
        }
        rounds += 1;
        log::debug!("cut round {rounds}: {added} cuts, worst violation {worst:.3e}");
        if integer {
            if let Some((fixed, polish_rounds)) = polish(problem, backend, opts, &lp.values) {
                let decisions = decode(problem, &fixed.values);
                let sol = LpSolution {
                    status: lp.status,
                    gap: lp.gap,
                    ..fixed
                };
                return Ok(finish(problem, decisions, sol, rounds + polish_rounds));
            }
        }
    }
}

fn worst_violation(problem: &UcProblem, decisions: &[NodeDecision]) -> f64 {
    decisions
        .iter()
        .filter(|d| !nadir_ok(&d.fr_state(), &problem.freq))
        .map(|d| nadir_violation(&d.fr_state(), &problem.freq).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Adds a separating cut at every insecure node. Returns the number of new
/// cuts and the worst relative violation (zero when every node is secure).
fn add_separating_cuts(problem: &mut UcProblem, decisions: &[NodeDecision]) -> (usize, f64) {
    let freq = problem.freq;
    let mut added = 0;
    for d in decisions.iter().filter(|d| !nadir_ok(&d.fr_state(), &freq)) {
        if let Some(c) = separating_cut(&d.fr_state(), &freq) {
            added += usize::from(problem.add_node_cut(d.node, c));
        }
    }
    (added, worst_violation(problem, decisions))
}

/// Fixes the commitment of an integer solution and runs the cut loop on the
/// remaining dispatch LP. Returns `None` when that LP becomes infeasible or
/// the loop stalls; the cuts found are kept in `problem` either way.
fn polish(
    problem: &mut UcProblem,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
    values: &[f64],
) -> Option<(LpSolution, usize)> {
    let mut fixed = problem.model.clone();
    for (v, x) in fixed.vars.iter_mut().zip(values) {
        if v.integer {
            let r = x.round();
            v.lb = r;
            v.ub = r;
            v.integer = false;
        }
    }
    let mut lp = Follower::new(fixed, backend, opts);
    for round in 0..problem.options.max_cut_rounds {
        let sol = lp.solve(problem, backend, opts).ok()?;
        let decisions = decode(problem, &sol.values);
        let (added, worst) = add_separating_cuts(problem, &decisions);
        if worst == 0.0 || (added == 0 && worst <= problem.options.cut_tolerance) {
            return Some((sol, round));
        }
        if added == 0 {
            return None;
        }
    }
    None
}

fn finish(
    problem: &UcProblem,
    decisions: Vec<NodeDecision>,
    lp: LpSolution,
    rounds: usize,
) -> UcSolution {
    let degradation_penalty = problem
        .vars
        .iter()
        .zip(&problem.degradation_weight)
        .filter_map(|(v, w)| v.ev.as_ref().and_then(|e| e.q).map(|q| w * lp.values[q.0]))
        .sum();
    if lp.status == SolveStatus::Limit {
        log::warn!(
            "solver limit reached; using incumbent with gap {:.3e}",
            lp.gap
        );
    }
    UcSolution {
        decisions,
        objective: lp.objective,
        degradation_penalty,
        status: lp.status,
        gap: lp.gap,
        cut_rounds: rounds,
        cuts: problem.cut_count(),
        values: lp.values,
    }
}

/// Frequency response the dispatch in `decision` could deliver, as
/// `(r_e, r_p)` in GW.
pub fn fr_capability(decision: &NodeDecision, spec: &SystemSpec) -> (f64, f64) {
    let hold_h = FR_HOLD_SECONDS / 3600.0;
    let mut r_e = 0.0;
    let mut r_p = 0.0;
    for (g, (u, p)) in spec
        .generators
        .iter()
        .zip(decision.commitment.iter().zip(&decision.output))
    {
        r_p += g.max_pfr_share * (g.capacity * u - p).max(0.0);
    }
    for (s, d) in spec.storages.iter().zip(&decision.storage) {
        let cap = (s.power_capacity - d.discharge + d.charge)
            .min(s.fr_limit())
            .min(d.soc * s.energy_capacity / hold_h)
            .max(0.0);
        match s.service {
            FrService::Efr => r_e += cap,
            FrService::Pfr => r_p += cap,
        }
    }
    let fleet = &spec.fleet;
    if fleet.offers_fr() && decision.ev_connected {
        let agg = aggregate_fleet(fleet);
        let d = &decision.ev;
        r_e += match fleet.regime {
            ChargingRegime::V2g => (agg.power - d.discharge + d.charge)
                .min((d.soc - fleet.soc_min) * agg.energy / hold_h)
                .max(0.0),
            ChargingRegime::Smart => d.charge.max(0.0),
            ChargingRegime::Unmanaged => 0.0,
        };
    }
    (r_e, r_p)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolutionCheck {
    pub max_balance_residual: f64,
    pub max_soc_violation: f64,
    pub departure_errors: Vec<usize>,
    pub rocof_failures: Vec<usize>,
    pub steady_state_failures: Vec<usize>,
    pub nadir_failures: Vec<usize>,
    /// Largest violation of any registered row, bound or cone.
    pub max_row_violation: f64,
}

impl SolutionCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_balance_residual < tol
            && self.max_soc_violation < tol
            && self.max_row_violation < tol
            && self.departure_errors.is_empty()
            && self.rocof_failures.is_empty()
            && self.steady_state_failures.is_empty()
            && self.nadir_failures.is_empty()
    }
}

/// Independent check of a solution against the physical requirements.
pub fn check_solution(problem: &UcProblem, sol: &UcSolution) -> SolutionCheck {
    let spec = &problem.spec;
    let fleet = &spec.fleet;
    let mut c = SolutionCheck {
        max_row_violation: problem.model.max_violation(&sol.values),
        ..Default::default()
    };
    let children = children_of(&problem.tree);
    for d in &sol.decisions {
        c.max_balance_residual = c.max_balance_residual.max(d.balance_residual().abs());
        let s = d.fr_state();
        if problem.options.frequency_constraints {
            if !rocof_ok(&s, &problem.freq) {
                c.rocof_failures.push(d.node);
            }
            if !steady_state_ok(&s, &problem.freq) {
                c.steady_state_failures.push(d.node);
            }
            if !nadir_ok(&s, &problem.freq) {
                c.nadir_failures.push(d.node);
            }
        }
        for st in &d.storage {
            c.max_soc_violation = c.max_soc_violation.max((-st.soc).max(st.soc - 1.0));
        }
        if fleet.n_ev > 0 {
            let e = d.ev.soc;
            c.max_soc_violation = c
                .max_soc_violation
                .max((fleet.soc_min - e).max(e - fleet.soc_max));
            if children[d.node].is_empty() {
                let agg = aggregate_fleet(fleet);
                let end = e + d.delta_tau
                    * (fleet.efficiency * d.ev.charge - d.ev.discharge / fleet.efficiency)
                    / agg.energy;
                c.max_soc_violation = c
                    .max_soc_violation
                    .max((fleet.soc_min - end).max(end - fleet.soc_max));
            }
            if problem.windows[d.node] == FleetWindow::DepartureInstant
                && (e - fleet.c_out).abs() > 1e-6
            {
                c.departure_errors.push(d.node);
            }
        }
    }
    c.max_soc_violation = c.max_soc_violation.max(0.0);
    c
}
