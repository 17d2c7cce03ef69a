//! Convex inner approximation (CIA) of the branch-flow feasible set.
//!
//! Around an operating point the squared current `l = (P^2 + Q^2) / v` of each
//! branch is bounded by its second-order expansion in `delta = (P, Q, v) - x0`.
//! Given upper and lower injection boxes, the bounds below are affine in the
//! decision variables except for the corner terms `delta' H delta`, which are
//! convex quadratics.
//!
//! ```text
//! P+ = C p+ - D_R+ l_lb - D_R- l_ub      P- = C p- - D_R+ l_ub - D_R- l_lb
//! Q+ = C q  - D_X+ l_lb - D_X- l_ub      Q- = C q  - D_X+ l_ub - D_X- l_lb
//! V+ = v0 + M_p+ p+ + M_p- p- + M_q q - H+ l_lb - H- l_ub
//! V- = v0 + M_p+ p- + M_p- p+ + M_q q - H+ l_ub - H- l_lb
//! l_lb = l0 + J+' d- + J-' d+
//! l_ub >= l0 + t,  t >= 2 |J' d| over the box,  t >= dc' H dc at every corner dc
//! ```

use std::fmt::Write;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use serde::Serialize;

use crate::distflow::{solve_distflow, PowerFlowSolution};
use crate::error::{PowerFlowError, ProgramError};
use crate::exec::{self, ExecMode};
use crate::matrices::{sign_split, NetworkMatrices};
use crate::model::{DemandProfile, FeederModel};
use crate::program::{ConvexProgram, LinExpr, VarBlock};

/// Eigenvalues of `H_e` below this are treated as zero in the factorisation.
pub const EIGEN_CLIP: f64 = 1e-10;

/// `(P, Q, v)` of one branch, with `v` the squared voltage at the receiving end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchPoint {
    pub p: f64,
    pub q: f64,
    pub v: f64,
}

impl BranchPoint {
    pub fn new(p: f64, q: f64, v: f64) -> Self {
        BranchPoint { p, q, v }
    }

    pub fn current(&self) -> f64 {
        (self.p * self.p + self.q * self.q) / self.v
    }

    pub fn jacobian(&self) -> Vector3<f64> {
        let v = self.v;
        Vector3::new(2.0 * self.p / v, 2.0 * self.q / v, -(self.p * self.p + self.q * self.q) / (v * v))
    }

    pub fn hessian(&self) -> Matrix3<f64> {
        let (p, q, v) = (self.p, self.q, self.v);
        let v2 = v * v;
        Matrix3::new(
            2.0 / v,
            0.0,
            -2.0 * p / v2,
            0.0,
            2.0 / v,
            -2.0 * q / v2,
            -2.0 * p / v2,
            -2.0 * q / v2,
            2.0 * (p * p + q * q) / (v2 * v),
        )
    }

    /// Second-order estimate `l0 + J'd + d'H d / 2`.
    pub fn taylor_current(&self, delta: &Vector3<f64>) -> f64 {
        self.current() + self.jacobian().dot(delta) + 0.5 * delta.dot(&(self.hessian() * delta))
    }
}

/// Taylor data of one branch at the operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTaylor {
    pub point: BranchPoint,
    pub l0: f64,
    pub j: Vector3<f64>,
    pub j_plus: Vector3<f64>,
    pub j_minus: Vector3<f64>,
    pub h: Matrix3<f64>,
    /// Ascending eigenvalues of `h`.
    pub eigenvalues: Vector3<f64>,
    /// `F` with `F'F = h` (negative eigenvalues clipped).
    pub factor: Matrix3<f64>,
}

impl BranchTaylor {
    pub fn new(point: BranchPoint) -> Self {
        let j = point.jacobian();
        let h = point.hessian();
        let eig = SymmetricEigen::new(h);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]]);
        // F = Lambda^{1/2} U'
        let mut factor = Matrix3::zeros();
        for (row, &k) in order.iter().enumerate() {
            let lam = eig.eigenvalues[k];
            let s = if lam > EIGEN_CLIP { lam.sqrt() } else { 0.0 };
            for c in 0..3 {
                factor[(row, c)] = s * eig.eigenvectors[(c, k)];
            }
        }
        BranchTaylor {
            point,
            l0: point.current(),
            j,
            j_plus: j.map(|x| x.max(0.0)),
            j_minus: j.map(|x| x.min(0.0)),
            h,
            eigenvalues,
            factor,
        }
    }
}

/// Exact power flow at zero flexibility plus per-branch Taylor data.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub flow: PowerFlowSolution,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub branches: Vec<BranchTaylor>,
}

impl OperatingPoint {
    /// Operating point at the given net injections.
    pub fn at(feeder: &FeederModel, p: &[f64], q: &[f64], mode: ExecMode) -> Result<Self, PowerFlowError> {
        let flow = solve_distflow(feeder, p, q)?;
        if let Some(k) = flow.v.iter().position(|&v| v.is_nan() || v <= 0.0) {
            return Err(PowerFlowError::NoSolution { discriminant: flow.v[k] });
        }
        let branches = exec::map_range(mode, feeder.node_count, |b| {
            BranchTaylor::new(BranchPoint::new(flow.p[b], flow.q[b], flow.v[b]))
        });
        Ok(OperatingPoint { flow, p: p.to_vec(), q: q.to_vec(), branches })
    }

    /// Per-branch debug table: `branch,from,to,P0,Q0,v0,l0,J_P,J_Q,J_v,eig_1,eig_2,eig_3`.
    pub fn taylor_csv(&self, feeder: &FeederModel) -> String {
        let mut out = String::from("branch,from,to,P0,Q0,v0,l0,J_P,J_Q,J_v,eig_1,eig_2,eig_3\n");
        for (b, t) in self.branches.iter().enumerate() {
            let br = &feeder.branches[b];
            writeln!(
                out,
                "{b},{},{},{},{},{},{},{},{},{},{},{},{}",
                br.from,
                br.to,
                t.point.p,
                t.point.q,
                t.point.v,
                t.l0,
                t.j[0],
                t.j[1],
                t.j[2],
                t.eigenvalues[0],
                t.eigenvalues[1],
                t.eigenvalues[2]
            )
            .unwrap();
        }
        out
    }
}

/// Operating point of the background demand alone (`p = -P_L`, `q = -Q_L`).
pub fn compute_operating_point(feeder: &FeederModel, demand: &DemandProfile) -> Result<OperatingPoint, PowerFlowError> {
    let p: Vec<f64> = demand.p_load.iter().map(|x| -x).collect();
    let q: Vec<f64> = demand.q_load.iter().map(|x| -x).collect();
    OperatingPoint::at(feeder, &p, &q, ExecMode::default())
}

/// The eight corners of the box spanned by `d_plus` and `d_minus`, choosing
/// each coordinate independently. Corner `k` takes coordinate `i` from
/// `d_minus` when bit `i` of `k` is set.
pub fn corner_deltas(d_plus: &Vector3<f64>, d_minus: &Vector3<f64>) -> [Vector3<f64>; 8] {
    std::array::from_fn(|k| Vector3::from_fn(|i, _| if k >> i & 1 == 1 { d_minus[i] } else { d_plus[i] }))
}

/// `max over corners of d' H d`.
pub fn corner_psi(h: &Matrix3<f64>, d_plus: &Vector3<f64>, d_minus: &Vector3<f64>) -> f64 {
    corner_deltas(d_plus, d_minus).iter().map(|d| d.dot(&(h * d))).fold(f64::NEG_INFINITY, f64::max)
}

/// Injection box the CIA must certify: every `p` with `p_lower <= p <= p_upper`
/// (entries affine in the decision variables) and fixed reactive injections `q`.
#[derive(Debug, Clone)]
pub struct InjectionBox {
    pub p_upper: Vec<LinExpr>,
    pub p_lower: Vec<LinExpr>,
    pub q: Vec<f64>,
}

/// Construction switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CiaOptions {
    /// Also require `l_lb >= 0`. The affine bound is already a valid lower
    /// bound (the squared current is jointly convex in `(P, Q, v)`), so the
    /// clamp only removes boxes in which a branch flow would reverse.
    pub clamp_lower_current: bool,
}

/// Variable handles created by [`build_cia_constraints`].
#[derive(Debug, Clone, Copy)]
pub struct CiaHandles {
    pub p_plus: VarBlock,
    pub p_minus: VarBlock,
    pub q_plus: VarBlock,
    pub q_minus: VarBlock,
    pub v_plus: VarBlock,
    pub v_minus: VarBlock,
    pub l_lb: VarBlock,
    pub l_ub: VarBlock,
    pub t: VarBlock,
}

fn mat_times(m: &DMatrix<f64>, row: usize, xs: &[LinExpr], out: &mut LinExpr, scale: f64) {
    for (c, x) in xs.iter().enumerate() {
        let a = m[(row, c)];
        if a != 0.0 {
            out.add_scaled(x, a * scale);
        }
    }
}

fn mat_block(m: &DMatrix<f64>, row: usize, block: &VarBlock, out: &mut LinExpr, scale: f64) {
    for c in 0..block.len() {
        let a = m[(row, c)];
        if a != 0.0 {
            out.add_term(block.at(c), a * scale);
        }
    }
}

/// Adds the CIA bound system to `program`.
///
/// Rows emitted: `7N` equalities (`P+-`, `Q+-`, `V+-`, `l_lb`), `5N` linear
/// inequalities (four `|J'd|` epigraph rows and the `l_ub` link, plus `N`
/// clamps when requested) and `8N` convex quadratics (one per corner).
pub fn build_cia_constraints(
    program: &mut ConvexProgram,
    m: &NetworkMatrices,
    v0: f64,
    op: &OperatingPoint,
    inj: &InjectionBox,
    options: &CiaOptions,
) -> Result<CiaHandles, ProgramError> {
    let n = m.dim();
    for len in [inj.p_upper.len(), inj.p_lower.len(), inj.q.len(), op.branches.len()] {
        if len != n {
            return Err(ProgramError::DimensionMismatch { expected: n, got: len });
        }
    }
    let free = (f64::NEG_INFINITY, f64::INFINITY);
    let h = CiaHandles {
        p_plus: program.add_variable("P_plus", n, free.0, free.1),
        p_minus: program.add_variable("P_minus", n, free.0, free.1),
        q_plus: program.add_variable("Q_plus", n, free.0, free.1),
        q_minus: program.add_variable("Q_minus", n, free.0, free.1),
        v_plus: program.add_variable("V_plus", n, free.0, free.1),
        v_minus: program.add_variable("V_minus", n, free.0, free.1),
        l_lb: program.add_variable("l_lb", n, free.0, free.1),
        l_ub: program.add_variable("l_ub", n, free.0, free.1),
        t: program.add_variable("t", n, free.0, free.1),
    };

    let (d_r_plus, d_r_minus) = sign_split(&m.d_r);
    let (m_p_plus, m_p_minus) = sign_split(&m.m_p);
    let cq = &m.c * nalgebra::DVector::from_column_slice(&inj.q);
    let mq = &m.m_q * nalgebra::DVector::from_column_slice(&inj.q);

    for b in 0..n {
        // P+ - (C p+ - D_R+ l_lb - D_R- l_ub) = 0
        let mut e = LinExpr::var(h.p_plus.at(b));
        mat_times(&m.c, b, &inj.p_upper, &mut e, -1.0);
        mat_block(&d_r_plus, b, &h.l_lb, &mut e, 1.0);
        mat_block(&d_r_minus, b, &h.l_ub, &mut e, 1.0);
        program.add_affine_eq(format!("P_plus_{b}"), e)?;

        let mut e = LinExpr::var(h.p_minus.at(b));
        mat_times(&m.c, b, &inj.p_lower, &mut e, -1.0);
        mat_block(&d_r_plus, b, &h.l_ub, &mut e, 1.0);
        mat_block(&d_r_minus, b, &h.l_lb, &mut e, 1.0);
        program.add_affine_eq(format!("P_minus_{b}"), e)?;

        let mut e = LinExpr::var(h.q_plus.at(b)).plus(-cq[b]);
        mat_block(&m.d_x_plus, b, &h.l_lb, &mut e, 1.0);
        mat_block(&m.d_x_minus, b, &h.l_ub, &mut e, 1.0);
        program.add_affine_eq(format!("Q_plus_{b}"), e)?;

        let mut e = LinExpr::var(h.q_minus.at(b)).plus(-cq[b]);
        mat_block(&m.d_x_plus, b, &h.l_ub, &mut e, 1.0);
        mat_block(&m.d_x_minus, b, &h.l_lb, &mut e, 1.0);
        program.add_affine_eq(format!("Q_minus_{b}"), e)?;

        let mut e = LinExpr::var(h.v_plus.at(b)).plus(-v0 - mq[b]);
        mat_times(&m_p_plus, b, &inj.p_upper, &mut e, -1.0);
        mat_times(&m_p_minus, b, &inj.p_lower, &mut e, -1.0);
        mat_block(&m.h_plus, b, &h.l_lb, &mut e, 1.0);
        mat_block(&m.h_minus, b, &h.l_ub, &mut e, 1.0);
        program.add_affine_eq(format!("V_plus_{b}"), e)?;

        let mut e = LinExpr::var(h.v_minus.at(b)).plus(-v0 - mq[b]);
        mat_times(&m_p_plus, b, &inj.p_lower, &mut e, -1.0);
        mat_times(&m_p_minus, b, &inj.p_upper, &mut e, -1.0);
        mat_block(&m.h_plus, b, &h.l_ub, &mut e, 1.0);
        mat_block(&m.h_minus, b, &h.l_lb, &mut e, 1.0);
        program.add_affine_eq(format!("V_minus_{b}"), e)?;
    }

    for (b, tay) in op.branches.iter().enumerate() {
        let x0 = tay.point;
        // delta+ and delta- as affine expressions
        let d_plus = [
            LinExpr::var(h.p_plus.at(b)).plus(-x0.p),
            LinExpr::var(h.q_plus.at(b)).plus(-x0.q),
            LinExpr::var(h.v_plus.at(b)).plus(-x0.v),
        ];
        let d_minus = [
            LinExpr::var(h.p_minus.at(b)).plus(-x0.p),
            LinExpr::var(h.q_minus.at(b)).plus(-x0.q),
            LinExpr::var(h.v_minus.at(b)).plus(-x0.v),
        ];
        let pair = |jp: &Vector3<f64>, dp: &[LinExpr; 3], jm: &Vector3<f64>, dm: &[LinExpr; 3]| {
            let mut e = LinExpr::default();
            for i in 0..3 {
                e.add_scaled(&dp[i], jp[i]);
                e.add_scaled(&dm[i], jm[i]);
            }
            e
        };
        // upper / lower end of J'delta over the box
        let hi = pair(&tay.j_plus, &d_plus, &tay.j_minus, &d_minus);
        let lo = pair(&tay.j_plus, &d_minus, &tay.j_minus, &d_plus);

        let mut e = LinExpr::var(h.l_lb.at(b)).plus(-tay.l0);
        e.add_scaled(&lo, -1.0);
        program.add_affine_eq(format!("l_lb_{b}"), e)?;
        if options.clamp_lower_current {
            program.add_affine_ineq(format!("l_lb_nonneg_{b}"), LinExpr::default().term(h.l_lb.at(b), -1.0))?;
        }

        let t = LinExpr::var(h.t.at(b));
        for (k, (expr, sign)) in [(&hi, 2.0), (&hi, -2.0), (&lo, 2.0), (&lo, -2.0)].into_iter().enumerate() {
            let mut e = expr.scaled(sign);
            e.add_scaled(&t, -1.0);
            program.add_affine_ineq(format!("t_lin_{b}_{k}"), e)?;
        }

        let factor = DMatrix::from_fn(3, 3, |r, c| tay.factor[(r, c)]);
        for k in 0..8 {
            let corner: Vec<LinExpr> =
                (0..3).map(|i| if k >> i & 1 == 1 { d_minus[i].clone() } else { d_plus[i].clone() }).collect();
            program.add_convex_quad(format!("t_corner_{b}_{k}"), &factor, &corner, t.scaled(-1.0))?;
        }

        // l0 + t - l_ub <= 0
        program.add_affine_ineq(format!("l_ub_{b}"), LinExpr::var(h.t.at(b)).term(h.l_ub.at(b), -1.0).plus(tay.l0))?;
    }
    Ok(h)
}

/// Network limits on the CIA bounds: `v_min <= V-`, `V+ <= v_max`, `l_ub <= l_max`.
pub fn add_network_limits(
    program: &mut ConvexProgram,
    feeder: &FeederModel,
    h: &CiaHandles,
) -> Result<(), ProgramError> {
    for b in 0..feeder.node_count {
        program
            .add_affine_ineq(format!("v_min_{b}"), LinExpr::constant(feeder.v_min[b]).term(h.v_minus.at(b), -1.0))?;
        program.add_affine_ineq(format!("v_max_{b}"), LinExpr::var(h.v_plus.at(b)).plus(-feeder.v_max[b]))?;
        program.add_affine_ineq(format!("l_max_{b}"), LinExpr::var(h.l_ub.at(b)).plus(-feeder.branches[b].l_max))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn origin_closed_forms() {
        let t = BranchTaylor::new(BranchPoint::new(0.0, 0.0, 1.0));
        assert_eq!(t.l0, 0.0);
        assert_eq!(t.j, Vector3::zeros());
        assert_eq!(t.h, Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 0.0)));
    }

    #[test]
    fn unit_point() {
        let x = BranchPoint::new(1.0, 0.0, 1.0);
        assert_eq!(x.current(), 1.0);
        assert_eq!(x.jacobian(), Vector3::new(2.0, 0.0, -1.0));
        assert_eq!(x.hessian(), Matrix3::new(2.0, 0.0, -2.0, 0.0, 2.0, 0.0, -2.0, 0.0, 2.0));
        let t = BranchTaylor::new(x);
        assert_relative_eq!(t.eigenvalues, Vector3::new(0.0, 2.0, 4.0), epsilon = 1e-12);
        assert_relative_eq!(t.factor.transpose() * t.factor, t.h, epsilon = 1e-12);
        assert_eq!(BranchPoint::new(3.0, 4.0, 25.0).current(), 1.0);
    }

    #[test]
    fn taylor_examples() {
        let x = BranchPoint::new(1.0, 0.0, 1.0);
        assert_eq!(x.taylor_current(&Vector3::zeros()), 1.0);
        assert_relative_eq!(x.taylor_current(&Vector3::new(0.1, 0.0, 0.0)), 1.21, epsilon = 1e-14);
        let est = x.taylor_current(&Vector3::new(0.0, 0.0, 0.1));
        assert_relative_eq!(est, 0.91, epsilon = 1e-14);
        assert!((est - 1.0 / 1.1).abs() < 1e-3);
    }

    #[test]
    fn corners() {
        let d = Vector3::new(0.3, -0.2, 0.1);
        assert!(corner_deltas(&d, &d).iter().all(|c| *c == d));
        let cs = corner_deltas(&Vector3::repeat(1.0), &Vector3::repeat(-1.0));
        let mut signs: Vec<[i32; 3]> = cs.iter().map(|c| [c[0] as i32, c[1] as i32, c[2] as i32]).collect();
        signs.sort();
        signs.dedup();
        assert_eq!(signs.len(), 8);
    }

    fn point() -> impl Strategy<Value = BranchPoint> {
        (-2.0..2.0f64, -2.0..2.0f64, 0.8..1.2f64).prop_map(|(p, q, v)| BranchPoint::new(p, q, v))
    }

    fn delta() -> impl Strategy<Value = Vector3<f64>> {
        (-0.5..0.5f64, -0.5..0.5f64, -0.2..0.2f64).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    proptest! {
        #[test]
        fn hessian_is_psd(x in point()) {
            let t = BranchTaylor::new(x);
            prop_assert!(t.eigenvalues[0] >= -1e-10);
            prop_assert!(t.j[2] <= 0.0);
            prop_assert_eq!(t.j_plus + t.j_minus, t.j);
        }

        #[test]
        fn exact_without_voltage_step(x in point(), dp in -1.0..1.0f64, dq in -1.0..1.0f64) {
            let est = x.taylor_current(&Vector3::new(dp, dq, 0.0));
            let exact = BranchPoint::new(x.p + dp, x.q + dq, x.v).current();
            prop_assert!((est - exact).abs() <= 1e-12 * exact.max(1.0));
        }

        #[test]
        fn triangle_chain(x in point(), d in delta()) {
            let t = BranchTaylor::new(x);
            let lin = t.j.dot(&d);
            let quad = d.dot(&(t.h * d));
            let taylor = x.taylor_current(&d);
            let mid = t.l0 + lin.abs() + 0.5 * quad;
            let top = t.l0 + (2.0 * lin.abs()).max(quad);
            prop_assert!(top >= mid - 1e-12);
            prop_assert!(mid >= taylor - 1e-12);
        }

        #[test]
        fn psi_matches_brute_force(x in point(), a in delta(), b in delta()) {
            let h = x.hessian();
            let mut brute = f64::NEG_INFINITY;
            for s in 0..8u32 {
                let c = Vector3::new(
                    if s & 1 == 0 { a[0] } else { b[0] },
                    if s & 2 == 0 { a[1] } else { b[1] },
                    if s & 4 == 0 { a[2] } else { b[2] },
                );
                brute = brute.max(c.dot(&(h * c)));
            }
            prop_assert_eq!(corner_psi(&h, &a, &b), brute);
        }
    }
}
