use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{
    BackendError, Capabilities, LinExpr, LpSolution, Model, SolveOptions, SolveStatus,
    SolverBackend,
};

/// Best-first branch and bound over interior-point relaxations. Handles
/// rotated cones natively; meant for small instances.
#[derive(Debug, Clone)]
pub struct ConicBranchAndBound {
    pub max_nodes: usize,
    pub integrality_tolerance: f64,
}

impl Default for ConicBranchAndBound {
    fn default() -> Self {
        Self {
            max_nodes: 20_000,
            integrality_tolerance: 1e-5,
        }
    }
}

enum Relaxation {
    Solved { x: Vec<f64>, objective: f64 },
    Infeasible,
}

struct OpenNode {
    bound: f64,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    // min-heap on the bound
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound)
    }
}

#[derive(Default)]
struct Rows {
    entries: BTreeMap<(usize, usize), f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Appends the row `-expr + s = 0` shifted so that `s = expr`.
    fn push_slack_of(&mut self, expr: &LinExpr) {
        let r = self.b.len();
        for &(v, c) in &expr.terms {
            *self.entries.entry((v.0, r)).or_insert(0.0) -= c;
        }
        self.b.push(expr.constant);
    }

    /// Appends `sum(c * x) + s = rhs`.
    fn push(&mut self, terms: &[(super::VarId, f64)], scale: f64, rhs: f64) {
        let r = self.b.len();
        for &(v, c) in terms {
            *self.entries.entry((v.0, r)).or_insert(0.0) += c * scale;
        }
        self.b.push(rhs);
    }
}

fn relax(
    model: &Model,
    lb: &[f64],
    ub: &[f64],
    deadline: Option<Instant>,
) -> Result<Relaxation, BackendError> {
    let n = model.vars.len();
    let mut zero = Rows::default();
    let mut nonneg = Rows::default();
    for (i, (&l, &u)) in lb.iter().zip(ub).enumerate() {
        if l > u + 1e-12 {
            return Ok(Relaxation::Infeasible);
        }
        let t = [(super::VarId(i), 1.0)];
        if l == u {
            zero.push(&t, 1.0, u);
            continue;
        }
        if l.is_finite() {
            nonneg.push(&t, -1.0, -l);
        }
        if u.is_finite() {
            nonneg.push(&t, 1.0, u);
        }
    }
    for r in &model.rows {
        if r.lb == r.ub {
            zero.push(&r.terms, 1.0, r.ub);
            continue;
        }
        if r.ub.is_finite() {
            nonneg.push(&r.terms, 1.0, r.ub);
        }
        if r.lb.is_finite() {
            nonneg.push(&r.terms, -1.0, -r.lb);
        }
    }
    let mut soc = Rows::default();
    for c in &model.cones {
        let mut sum = c.x1.clone();
        sum.add_expr(&c.x2, 1.0);
        let mut diff = c.x1.clone();
        diff.add_expr(&c.x2, -1.0);
        let mut two_y = LinExpr::new();
        two_y.add_expr(&c.y, 2.0);
        soc.push_slack_of(&sum);
        soc.push_slack_of(&two_y);
        soc.push_slack_of(&diff);
    }

    let (mz, mn, ms) = (zero.b.len(), nonneg.b.len(), soc.b.len());
    let m = mz + mn + ms;
    let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
    for (offset, rows) in [(0, &zero), (mz, &nonneg), (mz + mn, &soc)] {
        for (&(col, row), &val) in &rows.entries {
            if val != 0.0 {
                ii.push(row + offset);
                jj.push(col);
                vv.push(val);
            }
        }
    }
    let a = CscMatrix::new_from_triplets(m, n, ii, jj, vv);
    let p = CscMatrix::<f64>::zeros((n, n));
    // costs span many orders of magnitude; the interior point method prefers unit scale
    let scale = model.vars.iter().map(|v| v.cost.abs()).fold(1.0, f64::max);
    let q: Vec<f64> = model.vars.iter().map(|v| v.cost / scale).collect();
    let mut b = zero.b;
    b.extend(nonneg.b);
    b.extend(soc.b);
    let mut cones = Vec::new();
    if mz > 0 {
        cones.push(SupportedConeT::ZeroConeT(mz));
    }
    if mn > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(mn));
    }
    for _ in 0..ms / 3 {
        cones.push(SupportedConeT::SecondOrderConeT(3));
    }
    let mut settings = DefaultSettings::<f64> {
        verbose: false,
        ..Default::default()
    };
    if let Some(d) = deadline {
        let left = d.saturating_duration_since(Instant::now()).as_secs_f64();
        settings.time_limit = left.max(1e-3);
    }
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| BackendError::Failed(format!("clarabel setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(Relaxation::Solved {
            objective: model.objective(&sol.x),
            x: sol.x.clone(),
        }),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            Ok(Relaxation::Infeasible)
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            Err(BackendError::Unbounded)
        }
        SolverStatus::MaxTime => Err(BackendError::LimitWithoutSolution),
        other => Err(BackendError::Failed(format!("clarabel status {other:?}"))),
    }
}

impl SolverBackend for ConicBranchAndBound {
    fn name(&self) -> &str {
        "conic-bnb"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            mixed_integer_linear: true,
            mixed_integer_conic: true,
        }
    }

    fn solve(&self, model: &Model, options: &SolveOptions) -> Result<LpSolution, BackendError> {
        let start = Instant::now();
        let deadline = options
            .time_limit
            .map(|t| start + std::time::Duration::from_secs_f64(t));
        let mut open = BinaryHeap::new();
        open.push(OpenNode {
            bound: f64::NEG_INFINITY,
            lb: model.vars.iter().map(|v| v.lb).collect(),
            ub: model.vars.iter().map(|v| v.ub).collect(),
        });
        let mut incumbent: Option<(Vec<f64>, f64)> = None;
        let mut explored = 0usize;
        let mut limited = false;
        let prune = |bound: f64, inc: &Option<(Vec<f64>, f64)>| match inc {
            Some((_, obj)) => bound >= obj - options.relative_gap * obj.abs().max(1e-9),
            None => false,
        };

        while let Some(node) = open.pop() {
            if prune(node.bound, &incumbent) {
                continue;
            }
            if explored >= self.max_nodes || deadline.is_some_and(|d| Instant::now() >= d) {
                open.push(node);
                limited = true;
                break;
            }
            explored += 1;
            let (x, obj) = match relax(model, &node.lb, &node.ub, deadline) {
                Ok(Relaxation::Solved { x, objective }) => (x, objective),
                Ok(Relaxation::Infeasible) => continue,
                Err(BackendError::LimitWithoutSolution) => {
                    open.push(node);
                    limited = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            if prune(obj, &incumbent) {
                continue;
            }
            let branch = model
                .vars
                .iter()
                .enumerate()
                .filter(|(_, v)| v.integer)
                .map(|(i, _)| (i, (x[i] - x[i].round()).abs()))
                .filter(|&(_, f)| f > self.integrality_tolerance)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match branch {
                None => {
                    let mut xs = x;
                    for (i, v) in model.vars.iter().enumerate() {
                        if v.integer {
                            xs[i] = xs[i].round();
                        }
                    }
                    let o = model.objective(&xs);
                    if incumbent.as_ref().map_or(true, |(_, best)| o < *best) {
                        incumbent = Some((xs, o));
                    }
                }
                Some((i, _)) => {
                    let mut down = OpenNode {
                        bound: obj,
                        lb: node.lb.clone(),
                        ub: node.ub.clone(),
                    };
                    down.ub[i] = x[i].floor();
                    let mut up = OpenNode {
                        bound: obj,
                        lb: node.lb,
                        ub: node.ub,
                    };
                    up.lb[i] = x[i].ceil();
                    open.push(down);
                    open.push(up);
                }
            }
        }

        let (values, objective) = incumbent.ok_or(if limited {
            BackendError::LimitWithoutSolution
        } else {
            BackendError::Infeasible
        })?;
        let best_bound = open.iter().map(|n| n.bound).fold(objective, f64::min);
        let gap = ((objective - best_bound) / objective.abs().max(1e-9)).max(0.0);
        log::debug!("conic branch and bound: {explored} nodes, gap {gap:.2e}");
        Ok(LpSolution {
            values,
            objective,
            status: if limited {
                SolveStatus::Limit
            } else {
                SolveStatus::Optimal
            },
            gap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{HighsBackend, RotatedCone};
    use crate::uc::ConstraintTag;

    #[test]
    fn matches_highs_on_a_knapsack() {
        let mut m = Model::default();
        let w = [3.0, 4.0, 5.0, 6.0];
        let v = [4.0, 5.0, 7.0, 8.0];
        let ids: Vec<_> = (0..4)
            .map(|i| m.add_var(format!("x{i}"), 0.0, 2.0, true, -v[i]))
            .collect();
        let mut e = LinExpr::new();
        for (i, id) in ids.iter().enumerate() {
            e.add(*id, w[i]);
        }
        m.add_row(
            "cap",
            ConstraintTag::Balance,
            None,
            &e,
            f64::NEG_INFINITY,
            13.0,
        );
        let a = ConicBranchAndBound::default()
            .solve(&m, &SolveOptions::default())
            .unwrap();
        let b = HighsBackend::default()
            .solve(&m, &SolveOptions::default())
            .unwrap();
        assert!(
            (a.objective - b.objective).abs() < 1e-4,
            "{} vs {}",
            a.objective,
            b.objective
        );
    }

    #[test]
    fn rotated_cone_lower_bound() {
        // min x1 + x2 s.t. x1 * x2 >= 4 -> 4 at (2, 2)
        let mut m = Model::default();
        let x1 = m.add_var("x1", 0.0, 100.0, false, 1.0);
        let x2 = m.add_var("x2", 0.0, 100.0, false, 1.0);
        m.add_cone(RotatedCone {
            name: "k".into(),
            tag: ConstraintTag::Eq4Nadir,
            node: None,
            x1: LinExpr::var(x1),
            x2: LinExpr::var(x2),
            y: LinExpr::constant(2.0),
        });
        let s = ConicBranchAndBound::default()
            .solve(&m, &SolveOptions::default())
            .unwrap();
        assert!((s.objective - 4.0).abs() < 1e-5);
        assert!(m.max_violation(&s.values) < 1e-6);
    }

    #[test]
    fn integer_cone() {
        // min x1 + 3 x2, x1 * x2 >= 2.5, integer -> x1 = 3, x2 = 1
        let mut m = Model::default();
        let x1 = m.add_var("x1", 0.0, 10.0, true, 1.0);
        let x2 = m.add_var("x2", 0.0, 10.0, true, 3.0);
        m.add_cone(RotatedCone {
            name: "k".into(),
            tag: ConstraintTag::Eq4Nadir,
            node: None,
            x1: LinExpr::var(x1),
            x2: LinExpr::var(x2),
            y: LinExpr::constant(2.5f64.sqrt()),
        });
        let s = ConicBranchAndBound::default()
            .solve(&m, &SolveOptions::default())
            .unwrap();
        assert!((s.objective - 6.0).abs() < 1e-5, "{}", s.objective);
    }
}
