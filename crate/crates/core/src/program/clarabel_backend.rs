//! Adapter to the Clarabel interior-point solver.
//!
//! Clarabel solves `min q'x  s.t.  A x + s = b,  s in K`. Rows are emitted in
//! cone order: zero cone (equalities), nonnegative orthant (inequalities and
//! finite bounds), then one second-order cone per quadratic or cone block.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{ConvexProgram, LinExpr, RawResult, RawStatus, Sense};
use crate::error::ProgramError;

#[derive(Default)]
struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Appends the row `coefs . x + s = rhs`.
    fn push(&mut self, coefs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let row = self.b.len();
        for (j, v) in coefs {
            if v != 0.0 {
                self.i.push(row);
                self.j.push(j);
                self.v.push(v);
            }
        }
        self.b.push(rhs);
    }

    fn len(&self) -> usize {
        self.b.len()
    }
}

fn inf_norm(e: &LinExpr) -> f64 {
    e.terms.iter().map(|t| t.1.abs()).fold(0.0, f64::max)
}

/// `s = -(a.x + c) >= 0`, scaled to unit coefficient norm.
fn push_leq_zero(rows: &mut Rows, e: &LinExpr, scale: f64) {
    rows.push(e.terms.iter().map(|&(j, c)| (j, c * scale)), -e.constant * scale);
}

fn trivially_violated(e: &LinExpr, equality: bool) -> bool {
    if equality {
        e.constant.abs() > super::FEASIBILITY_TOL
    } else {
        e.constant > super::FEASIBILITY_TOL
    }
}

fn infeasible(msg: &str) -> RawResult {
    RawResult {
        status: RawStatus::Infeasible,
        backend_status: msg.to_string(),
        x: Vec::new(),
        iterations: 0,
        solve_time: 0.0,
    }
}

pub(super) fn solve(program: &ConvexProgram) -> Result<RawResult, ProgramError> {
    let n = program.vars.len();
    let mut rows = Rows::default();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    let start = rows.len();
    for (_, e) in &program.eqs {
        let norm = inf_norm(e);
        if norm == 0.0 {
            if trivially_violated(e, true) {
                return Ok(infeasible("constant equality row violated"));
            }
            continue;
        }
        push_leq_zero(&mut rows, e, 1.0 / norm);
    }
    if rows.len() > start {
        cones.push(SupportedConeT::ZeroConeT(rows.len() - start));
    }

    let start = rows.len();
    for (_, e) in &program.ineqs {
        let norm = inf_norm(e);
        if norm == 0.0 {
            if trivially_violated(e, false) {
                return Ok(infeasible("constant inequality row violated"));
            }
            continue;
        }
        push_leq_zero(&mut rows, e, 1.0 / norm);
    }
    for (j, info) in program.vars.iter().enumerate() {
        if info.lower > info.upper {
            return Ok(infeasible("crossed variable bounds"));
        }
        if info.upper.is_finite() {
            rows.push([(j, 1.0)], info.upper);
        }
        if info.lower.is_finite() {
            rows.push([(j, -1.0)], -info.lower);
        }
    }
    if rows.len() > start {
        cones.push(SupportedConeT::NonnegativeConeT(rows.len() - start));
    }

    // sum f_k^2 <= w with w = -(a.x + c):  ||(2 f, w - 1)|| <= w + 1
    for (_, q) in &program.quads {
        let scale = q.factor.iter().map(|f| 2.0 * inf_norm(f)).fold(inf_norm(&q.linear), f64::max);
        let s = if scale > 0.0 { 1.0 / scale } else { 1.0 };
        let a = &q.linear;
        rows.push(a.terms.iter().map(|&(j, c)| (j, c * s)), (1.0 - a.constant) * s);
        rows.push(a.terms.iter().map(|&(j, c)| (j, c * s)), (-a.constant - 1.0) * s);
        for f in &q.factor {
            rows.push(f.terms.iter().map(|&(j, c)| (j, -2.0 * c * s)), 2.0 * f.constant * s);
        }
        cones.push(SupportedConeT::SecondOrderConeT(2 + q.factor.len()));
    }

    for (_, c) in &program.cones {
        let scale = c.tail.iter().map(inf_norm).fold(inf_norm(&c.head), f64::max);
        let s = if scale > 0.0 { 1.0 / scale } else { 1.0 };
        for e in std::iter::once(&c.head).chain(&c.tail) {
            rows.push(e.terms.iter().map(|&(j, v)| (j, -v * s)), e.constant * s);
        }
        cones.push(SupportedConeT::SecondOrderConeT(1 + c.tail.len()));
    }

    let obj_sign = match program.sense() {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let obj_norm = inf_norm(&program.objective);
    let obj_scale = if obj_norm > 0.0 { obj_sign / obj_norm } else { obj_sign };
    let mut q = vec![0.0; n];
    for &(j, c) in &program.objective.terms {
        q[j] += c * obj_scale;
    }

    let m = rows.len();
    let a = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);
    let p = CscMatrix::<f64>::zeros((n, n));
    let settings =
        DefaultSettings::<f64> { verbose: false, max_iter: 500, max_threads: 1, ..DefaultSettings::default() };
    let mut solver = DefaultSolver::new(&p, &q, &a, &rows.b, &cones, settings)
        .map_err(|e| ProgramError::Invalid(format!("clarabel rejected the problem: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => RawStatus::Solved,
        SolverStatus::AlmostSolved => RawStatus::AlmostSolved,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => RawStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => RawStatus::Unbounded,
        _ => RawStatus::Failed,
    };
    Ok(RawResult {
        status,
        backend_status: format!("{:?}", sol.status),
        x: sol.x.clone(),
        iterations: sol.iterations,
        solve_time: sol.solve_time,
    })
}
