//! Solver-neutral mixed-integer model with optional rotated second-order
//! cones, and the backends that solve it.

mod conic;
mod export;
mod highs_backend;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use conic::ConicBranchAndBound;
pub use export::{write_lp, write_registry_json};
pub use highs_backend::HighsBackend;

use crate::uc::ConstraintTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variable {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub integer: bool,
    pub cost: f64,
}

/// Affine expression `sum(coef * var) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn add(&mut self, v: VarId, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        for &(v, c) in &other.terms {
            self.add(v, c * scale);
        }
        self.constant += other.constant * scale;
        self
    }

    pub fn with(mut self, v: VarId, coef: f64) -> Self {
        self.add(v, coef);
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>()
    }

    /// Merges duplicate variables and drops zero coefficients.
    pub fn compact(&self) -> Self {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|t| t.0);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Self {
            terms: out,
            constant: self.constant,
        }
    }
}

/// `lb <= terms <= ub`
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub tag: ConstraintTag,
    pub node: Option<usize>,
    pub terms: Vec<(VarId, f64)>,
    pub lb: f64,
    pub ub: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        (self.lb - a).max(a - self.ub).max(0.0)
    }
}

/// `x1 * x2 >= y^2` with `x1, x2 >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedCone {
    pub name: String,
    pub tag: ConstraintTag,
    pub node: Option<usize>,
    pub x1: LinExpr,
    pub x2: LinExpr,
    pub y: LinExpr,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Model {
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
    pub cones: Vec<RotatedCone>,
    pub objective_constant: f64,
}

impl Model {
    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lb: f64,
        ub: f64,
        integer: bool,
        cost: f64,
    ) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lb,
            ub,
            integer,
            cost,
        });
        VarId(self.vars.len() - 1)
    }

    /// Adds `lb <= expr <= ub`; the expression constant is moved to the bounds.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        tag: ConstraintTag,
        node: Option<usize>,
        expr: &LinExpr,
        lb: f64,
        ub: f64,
    ) -> usize {
        let e = expr.compact();
        self.rows.push(Row {
            name: name.into(),
            tag,
            node,
            terms: e.terms,
            lb: lb - e.constant,
            ub: ub - e.constant,
        });
        self.rows.len() - 1
    }

    pub fn add_cone(&mut self, cone: RotatedCone) {
        self.cones.push(cone);
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.objective_constant
            + self
                .vars
                .iter()
                .zip(x)
                .map(|(v, xi)| v.cost * xi)
                .sum::<f64>()
    }

    pub fn has_integers(&self) -> bool {
        self.vars.iter().any(|v| v.integer)
    }

    pub fn tags(&self) -> BTreeSet<ConstraintTag> {
        self.rows
            .iter()
            .map(|r| r.tag)
            .chain(self.cones.iter().map(|c| c.tag))
            .collect()
    }

    /// Copy without the rows and cones carrying any of `tags`.
    pub fn without_tags(&self, tags: &BTreeSet<ConstraintTag>) -> Self {
        Self {
            vars: self.vars.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| !tags.contains(&r.tag))
                .cloned()
                .collect(),
            cones: self
                .cones
                .iter()
                .filter(|c| !tags.contains(&c.tag))
                .cloned()
                .collect(),
            objective_constant: self.objective_constant,
        }
    }

    /// Copy with all integer variables made continuous.
    pub fn relaxed(&self) -> Self {
        let mut m = self.clone();
        for v in &mut m.vars {
            v.integer = false;
        }
        m
    }

    /// Largest violation of any row, bound, integrality, or cone (absolute).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, &xi)| {
                let b = (v.lb - xi).max(xi - v.ub).max(0.0);
                if v.integer {
                    b.max((xi - xi.round()).abs())
                } else {
                    b
                }
            })
            .fold(0.0, f64::max);
        let cones = self
            .cones
            .iter()
            .map(|c| {
                let (a, b, y) = (c.x1.eval(x), c.x2.eval(x), c.y.eval(x));
                let soc = (4.0 * y * y + (a - b).powi(2)).sqrt() - (a + b);
                soc.max(0.0)
            })
            .fold(0.0, f64::max);
        rows.max(bounds).max(cones)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub mixed_integer_linear: bool,
    pub mixed_integer_conic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub relative_gap: f64,
    /// Seconds.
    pub time_limit: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            relative_gap: 1e-4,
            time_limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Time or node limit reached; the incumbent is returned.
    Limit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub values: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("infeasible")]
    Infeasible,
    #[error("unbounded")]
    Unbounded,
    #[error("limit reached without a feasible solution")]
    LimitWithoutSolution,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{0}")]
    Failed(String),
}

/// A mixed-integer optimizer. Implementations must be callable from any
/// thread; one call solves one model.
pub trait SolverBackend: Send + Sync {
    fn name(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    fn solve(&self, model: &Model, options: &SolveOptions) -> Result<LpSolution, BackendError>;

    /// Opens a warm-startable session on a continuous model, if supported.
    fn lp_session(&self, _model: &Model, _options: &SolveOptions) -> Option<Box<dyn LpSession>> {
        None
    }
}

/// A continuous model kept loaded between solves. Rows may be appended;
/// each solve starts from the previous basis.
pub trait LpSession {
    fn add_row(&mut self, row: &Row);
    fn solve(&mut self) -> Result<LpSolution, BackendError>;
}
