//! Solver-agnostic convex programs: linear objective, affine equalities and
//! inequalities, convex quadratic constraints (given by a factor, so they are
//! PSD by construction) and plain second-order cones.
//!
//! Programs are handed to a conic backend after row normalisation, and every
//! "optimal" answer is re-checked here against the original rows.

mod clarabel_backend;
mod lp_format;

use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::ProgramError;

/// Feasibility tolerance for the independent re-check (per normalised row).
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Handle to one scalar variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

/// Handle to a contiguous block of scalar variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarBlock {
    start: usize,
    len: usize,
}

impl VarBlock {
    pub fn at(&self, i: usize) -> Var {
        assert!(i < self.len, "index {i} outside block of length {}", self.len);
        Var(self.start + i)
    }
    pub fn len(&self) -> usize {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
    pub fn iter(&self) -> impl Iterator<Item = Var> + '_ {
        (self.start..self.start + self.len).map(Var)
    }
}

/// Affine expression `sum coef * x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(v: Var) -> Self {
        LinExpr { terms: vec![(v.0, 1.0)], constant: 0.0 }
    }

    pub fn term(mut self, v: Var, coef: f64) -> Self {
        self.add_term(v, coef);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, v: Var, coef: f64) {
        if coef != 0.0 {
            self.terms.push((v.0, coef));
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(i, c)| (i, c * scale)));
        self.constant += other.constant * scale;
    }

    /// Adds `coeffs . block`; the lengths must agree.
    pub fn add_block(&mut self, block: &VarBlock, coeffs: &[f64]) -> Result<(), ProgramError> {
        if coeffs.len() != block.len() {
            return Err(ProgramError::DimensionMismatch { expected: block.len(), got: coeffs.len() });
        }
        for (v, &c) in block.iter().zip(coeffs) {
            self.add_term(v, c);
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> LinExpr {
        let mut e = LinExpr::default();
        e.add_scaled(self, s);
        e
    }

    /// Merges duplicate variables and drops zero coefficients; terms end up
    /// sorted by variable index.
    pub fn compact(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    fn coef_inf_norm(&self) -> f64 {
        self.terms.iter().map(|t| t.1.abs()).fold(0.0, f64::max)
    }
}

impl std::ops::Sub for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl std::ops::Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, 1.0);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

/// `sum_k factor_k(x)^2 + linear(x) <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub factor: Vec<LinExpr>,
    pub linear: LinExpr,
}

/// `|| tail(x) ||_2 <= head(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeConstraint {
    pub head: LinExpr,
    pub tail: Vec<LinExpr>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct VarInfo {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    pub(crate) vars: Vec<VarInfo>,
    pub(crate) eqs: Vec<(String, LinExpr)>,
    pub(crate) ineqs: Vec<(String, LinExpr)>,
    pub(crate) quads: Vec<(String, QuadConstraint)>,
    pub(crate) cones: Vec<(String, ConeConstraint)>,
    pub(crate) objective: LinExpr,
    pub(crate) sense: Option<Sense>,
}

/// Row counts of a program, used by construction tests and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProgramShape {
    pub variables: usize,
    pub equalities: usize,
    pub inequalities: usize,
    pub quadratics: usize,
    pub cones: usize,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `dim` scalar variables named `name[i]` with simple bounds.
    pub fn add_variable(&mut self, name: &str, dim: usize, lower: f64, upper: f64) -> VarBlock {
        let start = self.vars.len();
        for i in 0..dim {
            self.vars.push(VarInfo {
                name: if dim == 1 { name.to_string() } else { format!("{name}[{i}]") },
                lower,
                upper,
            });
        }
        VarBlock { start, len: dim }
    }

    /// Like [`add_variable`](Self::add_variable) with per-entry bounds.
    pub fn add_variable_bounded(&mut self, name: &str, lower: &[f64], upper: &[f64]) -> Result<VarBlock, ProgramError> {
        if lower.len() != upper.len() {
            return Err(ProgramError::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        let block = self.add_variable(name, lower.len(), f64::NEG_INFINITY, f64::INFINITY);
        for (i, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
            self.vars[block.start + i].lower = lo;
            self.vars[block.start + i].upper = hi;
        }
        Ok(block)
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.vars[v.0].name
    }

    pub fn bounds(&self, v: Var) -> (f64, f64) {
        (self.vars[v.0].lower, self.vars[v.0].upper)
    }

    fn check(&self, e: &LinExpr) -> Result<(), ProgramError> {
        match e.terms.iter().find(|t| t.0 >= self.vars.len()) {
            Some(&(i, _)) => Err(ProgramError::UnknownVariable(i)),
            None if !e.constant.is_finite() || e.terms.iter().any(|t| !t.1.is_finite()) => {
                Err(ProgramError::Invalid("non-finite coefficient".into()))
            }
            None => Ok(()),
        }
    }

    /// `expr == 0`
    pub fn add_affine_eq(&mut self, label: impl Into<String>, mut expr: LinExpr) -> Result<usize, ProgramError> {
        self.check(&expr)?;
        expr.compact();
        self.eqs.push((label.into(), expr));
        Ok(self.eqs.len() - 1)
    }

    /// `expr <= 0`
    pub fn add_affine_ineq(&mut self, label: impl Into<String>, mut expr: LinExpr) -> Result<usize, ProgramError> {
        self.check(&expr)?;
        expr.compact();
        self.ineqs.push((label.into(), expr));
        Ok(self.ineqs.len() - 1)
    }

    /// `lhs <= rhs`
    pub fn add_leq(&mut self, label: impl Into<String>, lhs: LinExpr, rhs: LinExpr) -> Result<usize, ProgramError> {
        self.add_affine_ineq(label, lhs - rhs)
    }

    /// Dense-row form: `coeffs . x + constant <= 0` over the whole variable registry.
    pub fn add_dense_ineq(
        &mut self,
        label: impl Into<String>,
        coeffs: &[f64],
        constant: f64,
    ) -> Result<usize, ProgramError> {
        if coeffs.len() != self.vars.len() {
            return Err(ProgramError::DimensionMismatch { expected: self.vars.len(), got: coeffs.len() });
        }
        let mut e = LinExpr::constant(constant);
        for (i, &c) in coeffs.iter().enumerate() {
            e.add_term(Var(i), c);
        }
        self.add_affine_ineq(label, e)
    }

    /// `|| F u(x) ||^2 + linear(x) <= 0`, where `u` is a vector of affine
    /// expressions and `F` a dense factor with `u.len()` columns.
    pub fn add_convex_quad(
        &mut self,
        label: impl Into<String>,
        factor: &DMatrix<f64>,
        args: &[LinExpr],
        linear: LinExpr,
    ) -> Result<usize, ProgramError> {
        if factor.ncols() != args.len() {
            return Err(ProgramError::DimensionMismatch { expected: factor.ncols(), got: args.len() });
        }
        for a in args {
            self.check(a)?;
        }
        self.check(&linear)?;
        let mut rows = Vec::with_capacity(factor.nrows());
        for r in 0..factor.nrows() {
            let mut e = LinExpr::default();
            for (c, a) in args.iter().enumerate() {
                e.add_scaled(a, factor[(r, c)]);
            }
            e.compact();
            if !e.terms.is_empty() || e.constant != 0.0 {
                rows.push(e);
            }
        }
        let mut linear = linear;
        linear.compact();
        self.quads.push((label.into(), QuadConstraint { factor: rows, linear }));
        Ok(self.quads.len() - 1)
    }

    /// `|| tail(x) || <= head(x)`
    pub fn add_cone(
        &mut self,
        label: impl Into<String>,
        head: LinExpr,
        tail: Vec<LinExpr>,
    ) -> Result<usize, ProgramError> {
        self.check(&head)?;
        for t in &tail {
            self.check(t)?;
        }
        let mut head = head;
        head.compact();
        let tail = tail
            .into_iter()
            .map(|mut t| {
                t.compact();
                t
            })
            .collect();
        self.cones.push((label.into(), ConeConstraint { head, tail }));
        Ok(self.cones.len() - 1)
    }

    pub fn set_objective(&mut self, sense: Sense, objective: LinExpr) -> Result<(), ProgramError> {
        self.check(&objective)?;
        let mut objective = objective;
        objective.compact();
        self.objective = objective;
        self.sense = Some(sense);
        Ok(())
    }

    pub fn sense(&self) -> Sense {
        self.sense.unwrap_or(Sense::Minimize)
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn shape(&self) -> ProgramShape {
        ProgramShape {
            variables: self.vars.len(),
            equalities: self.eqs.len(),
            inequalities: self.ineqs.len(),
            quadratics: self.quads.len(),
            cones: self.cones.len(),
        }
    }

    pub fn quad_constraints(&self) -> impl Iterator<Item = &QuadConstraint> {
        self.quads.iter().map(|(_, q)| q)
    }

    pub fn equality_labels(&self) -> impl Iterator<Item = &str> {
        self.eqs.iter().map(|(l, _)| l.as_str())
    }

    pub fn inequality_labels(&self) -> impl Iterator<Item = &str> {
        self.ineqs.iter().map(|(l, _)| l.as_str())
    }

    /// Largest constraint violation at `x`, each row scaled to unit
    /// infinity-norm of its coefficients.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, info) in x.iter().zip(&self.vars) {
            worst = worst.max(info.lower - v).max(v - info.upper);
        }
        let norm = |e: &LinExpr| e.coef_inf_norm().max(1e-12);
        for (_, e) in &self.eqs {
            worst = worst.max(e.eval(x).abs() / norm(e));
        }
        for (_, e) in &self.ineqs {
            worst = worst.max(e.eval(x) / norm(e));
        }
        for (_, q) in &self.quads {
            let sq: f64 = q.factor.iter().map(|f| f.eval(x).powi(2)).sum();
            let fscale = q.factor.iter().map(|f| f.coef_inf_norm().powi(2)).fold(0.0, f64::max);
            let scale = q.linear.coef_inf_norm().max(fscale).max(1e-12);
            worst = worst.max((sq + q.linear.eval(x)) / scale);
        }
        for (_, c) in &self.cones {
            let t: f64 = c.tail.iter().map(|f| f.eval(x).powi(2)).sum::<f64>().sqrt();
            let scale = c.tail.iter().map(LinExpr::coef_inf_norm).fold(c.head.coef_inf_norm(), f64::max).max(1e-12);
            worst = worst.max((t - c.head.eval(x)) / scale);
        }
        worst
    }

    /// Text dump in an LP-like format (see README).
    pub fn to_lp_string(&self) -> String {
        lp_format::write(self)
    }

    /// Solves with the given backend.
    pub fn solve_with(&self, backend: Backend) -> Result<Solution, ProgramError> {
        if self.vars.is_empty() {
            return Err(ProgramError::Invalid("program has no variables".into()));
        }
        let raw = match backend {
            Backend::Clarabel => clarabel_backend::solve(self)?,
        };
        Ok(self.finish(raw))
    }

    /// Solves with the backend chosen by `GRIDMARKET_SOLVER`.
    pub fn solve(&self) -> Result<Solution, ProgramError> {
        self.solve_with(Backend::from_env()?)
    }

    fn finish(&self, raw: RawResult) -> Solution {
        let mut stats = SolveStats {
            iterations: raw.iterations,
            solve_time_secs: raw.solve_time,
            max_violation: None,
            backend_status: raw.backend_status,
        };
        let status = match raw.status {
            RawStatus::Solved | RawStatus::AlmostSolved => {
                let viol = self.max_violation(&raw.x);
                stats.max_violation = Some(viol);
                if viol <= FEASIBILITY_TOL {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::NumericFailure
                }
            }
            RawStatus::Infeasible => SolveStatus::Infeasible,
            RawStatus::Unbounded => SolveStatus::Unbounded,
            RawStatus::Failed => SolveStatus::NumericFailure,
        };
        if status == SolveStatus::Optimal {
            let objective = self.objective.eval(&raw.x);
            Solution { status, values: Some(raw.x), objective: Some(objective), stats }
        } else {
            Solution { status, values: None, objective: None, stats }
        }
    }
}

/// Conic backends. Only Clarabel ships today.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Clarabel,
}

impl Backend {
    pub const ENV_VAR: &'static str = "GRIDMARKET_SOLVER";

    pub fn from_name(name: &str) -> Result<Self, ProgramError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "" | "clarabel" => Ok(Backend::Clarabel),
            other => Err(ProgramError::BackendUnavailable(format!("unknown backend {other:?} (available: clarabel)"))),
        }
    }

    pub fn from_env() -> Result<Self, ProgramError> {
        match std::env::var(Self::ENV_VAR) {
            Ok(v) => Self::from_name(&v),
            Err(_) => Ok(Backend::Clarabel),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RawStatus {
    Solved,
    AlmostSolved,
    Infeasible,
    Unbounded,
    Failed,
}

pub(crate) struct RawResult {
    pub status: RawStatus,
    pub backend_status: String,
    pub x: Vec<f64>,
    pub iterations: u32,
    pub solve_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericFailure => "numeric-failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: u32,
    /// Wall time; left out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub solve_time_secs: f64,
    /// Re-checked worst normalised violation (present when the backend claimed success).
    pub max_violation: Option<f64>,
    pub backend_status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    pub values: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub stats: SolveStats,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Value of one variable; panics unless optimal.
    pub fn value(&self, v: Var) -> f64 {
        self.values.as_ref().expect("solution has no primal values")[v.0]
    }

    pub fn block(&self, b: &VarBlock) -> Vec<f64> {
        b.iter().map(|v| self.value(v)).collect()
    }

    pub fn eval(&self, e: &LinExpr) -> f64 {
        e.eval(self.values.as_ref().expect("solution has no primal values"))
    }
}
