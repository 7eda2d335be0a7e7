use highs::{Col, HighsModelStatus, HighsSolutionStatus, RowProblem, Sense};

use super::{
    BackendError, Capabilities, LpSession, LpSolution, Model, Row, SolveOptions, SolveStatus,
    SolverBackend,
};

/// MILP backend on HiGHS. Conic constraints are rejected; use the cut
/// formulation of the nadir constraint with this backend.
#[derive(Debug, Clone)]
pub struct HighsBackend {
    pub threads: u32,
    /// Print the HiGHS log.
    pub verbose: bool,
}

impl Default for HighsBackend {
    fn default() -> Self {
        Self {
            threads: 1,
            verbose: false,
        }
    }
}

impl SolverBackend for HighsBackend {
    fn name(&self) -> &str {
        "highs"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            mixed_integer_linear: true,
            mixed_integer_conic: false,
        }
    }

    fn solve(&self, model: &Model, options: &SolveOptions) -> Result<LpSolution, BackendError> {
        if !model.cones.is_empty() {
            return Err(BackendError::Unsupported(
                "highs cannot handle second-order cone constraints".into(),
            ));
        }
        let (m, _) = self.load(model, options);
        let solved = m
            .try_solve()
            .map_err(|e| BackendError::Failed(format!("highs: {e:?}")))?;
        read_solution(&solved, model.has_integers(), |x| model.objective(x))
    }

    fn lp_session(&self, model: &Model, options: &SolveOptions) -> Option<Box<dyn LpSession>> {
        if model.has_integers() || !model.cones.is_empty() {
            return None;
        }
        let (m, cols) = self.load(model, options);
        Some(Box::new(HighsSession {
            model: Some(m),
            cols,
            costs: model.vars.iter().map(|v| v.cost).collect(),
            constant: model.objective_constant,
        }))
    }
}

impl HighsBackend {
    fn load(&self, model: &Model, options: &SolveOptions) -> (highs::Model, Vec<Col>) {
        let mut pb = RowProblem::default();
        let cols: Vec<_> = model
            .vars
            .iter()
            .map(|v| pb.add_column_with_integrality(v.cost, v.lb..=v.ub, v.integer))
            .collect();
        for r in &model.rows {
            let terms: Vec<_> = r.terms.iter().map(|&(v, c)| (cols[v.0], c)).collect();
            pb.add_row(r.lb..=r.ub, terms);
        }
        let mut m = pb.optimise(Sense::Minimise);
        if self.verbose {
            m.set_option("output_flag", true);
            m.set_option("log_to_console", true);
        } else {
            m.make_quiet();
        }
        m.set_option("threads", self.threads.max(1) as i32);
        m.set_option("mip_rel_gap", options.relative_gap);
        if let Some(t) = options.time_limit {
            m.set_option("time_limit", t);
        }
        (m, cols)
    }
}

fn read_solution(
    solved: &highs::SolvedModel,
    integer: bool,
    objective: impl Fn(&[f64]) -> f64,
) -> Result<LpSolution, BackendError> {
    let status = match solved.status() {
        HighsModelStatus::Optimal | HighsModelStatus::ModelEmpty => SolveStatus::Optimal,
        HighsModelStatus::Infeasible => return Err(BackendError::Infeasible),
        HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => {
            return Err(BackendError::Unbounded)
        }
        HighsModelStatus::ReachedTimeLimit
        | HighsModelStatus::ReachedIterationLimit
        | HighsModelStatus::ReachedSolutionLimit => {
            if solved.primal_solution_status() != HighsSolutionStatus::Feasible {
                return Err(BackendError::LimitWithoutSolution);
            }
            SolveStatus::Limit
        }
        other => return Err(BackendError::Failed(format!("highs status {other:?}"))),
    };
    let values = solved.get_solution().columns().to_vec();
    let gap = if integer {
        solved.mip_gap().max(0.0)
    } else {
        0.0
    };
    let objective = objective(&values);
    Ok(LpSolution {
        values,
        objective,
        status,
        gap: if gap.is_finite() { gap } else { f64::INFINITY },
    })
}

struct HighsSession {
    model: Option<highs::Model>,
    cols: Vec<Col>,
    costs: Vec<f64>,
    constant: f64,
}

impl LpSession for HighsSession {
    fn add_row(&mut self, row: &Row) {
        let cols = &self.cols;
        let m = self.model.as_mut().expect("session model present");
        m.add_row(
            row.lb..=row.ub,
            row.terms.iter().map(|&(v, c)| (cols[v.0], c)),
        );
    }

    fn solve(&mut self) -> Result<LpSolution, BackendError> {
        let m = self.model.take().expect("session model present");
        let solved = m
            .try_solve()
            .map_err(|e| BackendError::Failed(format!("highs: {e:?}")))?;
        let costs = &self.costs;
        let constant = self.constant;
        let out = read_solution(&solved, false, |x| {
            constant + costs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
        });
        self.model = Some(solved.into());
        out
    }
}
