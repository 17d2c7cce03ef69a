//! Exact branch-flow (DistFlow) solver and the LinDist reference.
//!
//! For branch `b` feeding node `j = b + 1` from parent `i`:
//!
//! ```text
//! v_j  = v_i + 2 r P_b + 2 x Q_b - |z|^2 l_b
//! P_b  = p_j + sum_{children c of j} (P_c - r_c l_c)
//! Q_b  = q_j + sum_{children c of j} (Q_c - x_c l_c)
//! l_b  = (P_b^2 + Q_b^2) / v_j
//! ```
//!
//! `P_b` is measured at the child end of the branch, so positive injections
//! raise downstream voltages.

use serde::Serialize;

use crate::error::PowerFlowError;
use crate::model::FeederModel;

/// Sweep stops once the largest voltage update falls below this.
pub const SWEEP_TOLERANCE: f64 = 1e-10;
pub const SWEEP_MAX_ITERATIONS: usize = 200;
/// Default admissibility tolerance (p.u.^2) for voltages and currents.
pub const ADMISSIBILITY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFlowSolution {
    /// Squared voltage of node `k + 1`.
    pub v: Vec<f64>,
    /// Squared current of branch `k` (feeding node `k + 1`).
    pub l: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

impl PowerFlowSolution {
    pub fn max_voltage(&self) -> f64 {
        self.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn min_voltage(&self) -> f64 {
        self.v.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn check_finite(p: &[f64], q: &[f64]) -> Result<(), PowerFlowError> {
    for (k, (a, b)) in p.iter().zip(q).enumerate() {
        if !a.is_finite() || !b.is_finite() {
            return Err(PowerFlowError::NonFinite(k + 1));
        }
    }
    Ok(())
}

/// Backward pass: branch flows from injections and the current `l`.
fn accumulate_flows(feeder: &FeederModel, p: &[f64], q: &[f64], l: &[f64], flow_p: &mut [f64], flow_q: &mut [f64]) {
    flow_p.copy_from_slice(p);
    flow_q.copy_from_slice(q);
    for &node in feeder.order().iter().rev() {
        let b = node - 1;
        let parent = feeder.branches[b].from;
        if parent != 0 {
            let br = &feeder.branches[b];
            flow_p[parent - 1] += flow_p[b] - br.r * l[b];
            flow_q[parent - 1] += flow_q[b] - br.x * l[b];
        }
    }
}

/// Largest absolute residual of the four DistFlow equations.
pub fn distflow_residual(feeder: &FeederModel, p: &[f64], q: &[f64], sol: &PowerFlowSolution) -> f64 {
    let n = feeder.node_count;
    let mut worst: f64 = 0.0;
    let mut expect_p = p.to_vec();
    let mut expect_q = q.to_vec();
    for b in 0..n {
        let parent = feeder.branches[b].from;
        if parent != 0 {
            let br = &feeder.branches[b];
            expect_p[parent - 1] += sol.p[b] - br.r * sol.l[b];
            expect_q[parent - 1] += sol.q[b] - br.x * sol.l[b];
        }
    }
    for (b, br) in feeder.branches.iter().enumerate() {
        let vi = if br.from == 0 { feeder.v0 } else { sol.v[br.from - 1] };
        let vj = sol.v[b];
        let volt = vi + 2.0 * br.r * sol.p[b] + 2.0 * br.x * sol.q[b] - br.z2() * sol.l[b] - vj;
        let cur = sol.l[b] * vj - (sol.p[b] * sol.p[b] + sol.q[b] * sol.q[b]);
        worst = worst
            .max(volt.abs())
            .max((sol.p[b] - expect_p[b]).abs())
            .max((sol.q[b] - expect_q[b]).abs())
            .max(cur.abs() / vj.abs().max(1e-12));
    }
    worst
}

/// Exact DistFlow by backward/forward sweep.
///
/// `p`, `q` are net nodal injections (p.u.) for nodes `1..=N`.
pub fn solve_distflow(feeder: &FeederModel, p: &[f64], q: &[f64]) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = feeder.node_count;
    assert_eq!(p.len(), n);
    assert_eq!(q.len(), n);
    check_finite(p, q)?;

    let mut v = vec![feeder.v0; n];
    let mut l = vec![0.0; n];
    let mut flow_p = vec![0.0; n];
    let mut flow_q = vec![0.0; n];
    let mut last_step = f64::INFINITY;

    for it in 1..=SWEEP_MAX_ITERATIONS {
        accumulate_flows(feeder, p, q, &l, &mut flow_p, &mut flow_q);
        let mut step: f64 = 0.0;
        for &node in feeder.order() {
            let b = node - 1;
            let br = &feeder.branches[b];
            let vi = if br.from == 0 { feeder.v0 } else { v[br.from - 1] };
            let new_v = vi + 2.0 * br.r * flow_p[b] + 2.0 * br.x * flow_q[b] - br.z2() * l[b];
            if !new_v.is_finite() || new_v <= 0.0 {
                return Err(PowerFlowError::NotConverged { iterations: it, last_step });
            }
            step = step.max((new_v - v[b]).abs());
            v[b] = new_v;
        }
        for b in 0..n {
            l[b] = (flow_p[b] * flow_p[b] + flow_q[b] * flow_q[b]) / v[b];
        }
        last_step = step;
        if step < SWEEP_TOLERANCE {
            accumulate_flows(feeder, p, q, &l, &mut flow_p, &mut flow_q);
            for &node in feeder.order() {
                let b = node - 1;
                let br = &feeder.branches[b];
                let vi = if br.from == 0 { feeder.v0 } else { v[br.from - 1] };
                v[b] = vi + 2.0 * br.r * flow_p[b] + 2.0 * br.x * flow_q[b] - br.z2() * l[b];
            }
            for b in 0..n {
                l[b] = (flow_p[b] * flow_p[b] + flow_q[b] * flow_q[b]) / v[b];
            }
            let mut sol =
                PowerFlowSolution { v, l, p: flow_p, q: flow_q, converged: true, iterations: it, residual: 0.0 };
            sol.residual = distflow_residual(feeder, p, q, &sol);
            return Ok(sol);
        }
    }
    Err(PowerFlowError::NotConverged { iterations: SWEEP_MAX_ITERATIONS, last_step })
}

/// High-voltage root of the two-node DistFlow quadratic
/// `v1^2 - (v0 + 2rp + 2xq) v1 + |z|^2 (p^2 + q^2) = 0`.
pub fn solve_two_node_exact(r: f64, x: f64, p: f64, q: f64, v0: f64) -> Result<f64, PowerFlowError> {
    assert!(v0 > 0.0, "substation voltage must be positive");
    let b = v0 + 2.0 * r * p + 2.0 * x * q;
    let c = (r * r + x * x) * (p * p + q * q);
    let disc = b * b - 4.0 * c;
    if disc < 0.0 || b <= 0.0 {
        return Err(PowerFlowError::NoSolution { discriminant: disc });
    }
    Ok((b + disc.sqrt()) / 2.0)
}

/// LinDist: DistFlow with every `l` set to zero. Computed by a lossless
/// sweep, independently of the matrix form.
pub fn solve_lindist(feeder: &FeederModel, p: &[f64], q: &[f64]) -> PowerFlowSolution {
    let n = feeder.node_count;
    let zeros = vec![0.0; n];
    let mut flow_p = vec![0.0; n];
    let mut flow_q = vec![0.0; n];
    accumulate_flows(feeder, p, q, &zeros, &mut flow_p, &mut flow_q);
    let mut v = vec![0.0; n];
    for &node in feeder.order() {
        let b = node - 1;
        let br = &feeder.branches[b];
        let vi = if br.from == 0 { feeder.v0 } else { v[br.from - 1] };
        v[b] = vi + 2.0 * br.r * flow_p[b] + 2.0 * br.x * flow_q[b];
    }
    PowerFlowSolution { v, l: zeros, p: flow_p, q: flow_q, converged: true, iterations: 1, residual: 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Under,
    Over,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoltageViolation {
    pub node: usize,
    pub v: f64,
    pub bound: f64,
    pub side: BoundSide,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurrentViolation {
    pub branch: (usize, usize),
    pub l: f64,
    pub bound: f64,
}

/// Limit violations of one exact power flow.
///
/// `worst_violation` is the largest excursion beyond the tolerance-widened
/// limits; it is `<= 0` (the negated smallest margin) exactly when both lists
/// are empty. `worst_exceedance` measures against the raw limits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationReport {
    pub voltage: Vec<VoltageViolation>,
    pub current: Vec<CurrentViolation>,
    pub worst_violation: f64,
    pub worst_exceedance: f64,
    pub tolerance: f64,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.voltage.is_empty() && self.current.is_empty()
    }
}

/// Compares a power-flow solution against the feeder limits.
pub fn violations(feeder: &FeederModel, sol: &PowerFlowSolution, tol: f64) -> ViolationReport {
    let mut report = ViolationReport {
        voltage: Vec::new(),
        current: Vec::new(),
        worst_violation: f64::NEG_INFINITY,
        worst_exceedance: f64::NEG_INFINITY,
        tolerance: tol,
    };
    for k in 0..feeder.node_count {
        let v = sol.v[k];
        for (excess, bound, side) in [
            (feeder.v_min[k] - v, feeder.v_min[k], BoundSide::Under),
            (v - feeder.v_max[k], feeder.v_max[k], BoundSide::Over),
        ] {
            report.worst_exceedance = report.worst_exceedance.max(excess);
            report.worst_violation = report.worst_violation.max(excess - tol);
            if excess > tol {
                report.voltage.push(VoltageViolation { node: k + 1, v, bound, side });
            }
        }
    }
    for (b, br) in feeder.branches.iter().enumerate() {
        let excess = sol.l[b] - br.l_max;
        report.worst_exceedance = report.worst_exceedance.max(excess);
        report.worst_violation = report.worst_violation.max(excess - tol);
        if excess > tol {
            report.current.push(CurrentViolation { branch: (br.from, br.to), l: sol.l[b], bound: br.l_max });
        }
    }
    report
}

/// Solves the exact power flow and reports every limit violation.
pub fn check_admissible(
    feeder: &FeederModel,
    p: &[f64],
    q: &[f64],
    tol: f64,
) -> Result<ViolationReport, PowerFlowError> {
    let sol = solve_distflow(feeder, p, q)?;
    Ok(violations(feeder, &sol, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Branch, FeederSpec, DEFAULT_V_MAX, DEFAULT_V_MIN};

    pub(crate) fn feeder(edges: &[(usize, usize, f64, f64)], l_max: f64) -> FeederModel {
        let n = edges.len();
        FeederModel::new(FeederSpec {
            node_count: n,
            branches: edges.iter().map(|&(from, to, r, x)| Branch { from, to, r, x, l_max }).collect(),
            v0: 1.0,
            v_min: vec![DEFAULT_V_MIN; n],
            v_max: vec![DEFAULT_V_MAX; n],
            base_mva: 1.0,
            base_kv: 1.0,
            labels: vec![],
        })
        .unwrap()
    }

    // High-voltage root of v^2 - 0.9 v + 0.005 = 0.
    const TWO_NODE_ROOT: f64 = 0.894_409_720_865_779_4;

    #[test]
    fn oracle_constant() {
        let root = (0.9 + 0.79f64.sqrt()) / 2.0;
        assert!((root - TWO_NODE_ROOT).abs() < 1e-15);
        assert!((root * root - 0.9 * root + 0.005).abs() < 1e-15);
    }

    #[test]
    fn two_node_sweep_matches_root() {
        let f = feeder(&[(0, 1, 0.1, 0.1)], 10.0);
        let sol = solve_distflow(&f, &[-0.5], &[0.0]).unwrap();
        assert!((sol.v[0] - TWO_NODE_ROOT).abs() < 1e-10, "{}", sol.v[0]);
        assert!(sol.residual < 1e-8);
        let exact = solve_two_node_exact(0.1, 0.1, -0.5, 0.0, 1.0).unwrap();
        assert!((exact - TWO_NODE_ROOT).abs() < 1e-14);
    }

    #[test]
    fn two_node_exact_edge_cases() {
        assert_eq!(solve_two_node_exact(0.1, 0.1, 0.0, 0.0, 1.0).unwrap(), 1.0);
        assert!(matches!(solve_two_node_exact(0.1, 0.1, -10.0, 0.0, 1.0), Err(PowerFlowError::NoSolution { .. })));
    }

    #[test]
    fn no_load_fixed_point() {
        let f = feeder(&[(0, 1, 0.1, 0.2), (1, 2, 0.05, 0.1), (1, 3, 0.3, 0.1)], 1.0);
        let sol = solve_distflow(&f, &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(sol.v, vec![1.0; 3]);
        assert_eq!(sol.l, vec![0.0; 3]);
        assert_eq!(sol.p, vec![0.0; 3]);
        let lin = solve_lindist(&f, &[0.0; 3], &[0.0; 3]);
        assert_eq!(lin.v, vec![1.0; 3]);
    }

    #[test]
    fn path_residual_small() {
        let f = feeder(&[(0, 1, 0.02, 0.03), (1, 2, 0.03, 0.02)], 1.0);
        let p = [-0.2, -0.3];
        let q = [-0.1, -0.05];
        let sol = solve_distflow(&f, &p, &q).unwrap();
        assert!(sol.residual < 1e-8);
        // Independent substitution.
        let (b0, b1) = (&f.branches[0], &f.branches[1]);
        let p1 = p[1];
        let l1 = (sol.p[1].powi(2) + sol.q[1].powi(2)) / sol.v[1];
        assert!((sol.p[1] - p1).abs() < 1e-12);
        assert!((sol.l[1] - l1).abs() < 1e-10);
        let p0 = p[0] + sol.p[1] - b1.r * sol.l[1];
        assert!((sol.p[0] - p0).abs() < 1e-10);
        let v1 = 1.0 + 2.0 * b0.r * sol.p[0] + 2.0 * b0.x * sol.q[0] - b0.z2() * sol.l[0];
        assert!((sol.v[0] - v1).abs() < 1e-9);
    }

    #[test]
    fn lindist_overestimates_under_load() {
        let f = feeder(&[(0, 1, 0.1, 0.1)], 10.0);
        let lin = solve_lindist(&f, &[-0.5], &[0.0]);
        assert!((lin.v[0] - 0.9).abs() < 1e-15);
        assert!(lin.v[0] > TWO_NODE_ROOT);
    }

    #[test]
    fn collapse_is_reported() {
        let f = feeder(&[(0, 1, 0.1, 0.1)], 10.0);
        assert!(solve_distflow(&f, &[-10.0], &[0.0]).is_err());
    }

    #[test]
    fn voltage_violation_listed() {
        let mut spec = feeder(&[(0, 1, 0.1, 0.1)], 10.0).to_spec();
        spec.v_min = vec![0.95 * 0.95];
        let f = FeederModel::new(spec).unwrap();
        let r = check_admissible(&f, &[-0.5], &[0.0], ADMISSIBILITY_TOL).unwrap();
        assert_eq!(r.voltage.len(), 1);
        assert_eq!(r.voltage[0].side, BoundSide::Under);
        assert!((r.voltage[0].v - TWO_NODE_ROOT).abs() < 1e-10);
        assert!(r.worst_violation > 0.0);

        let benign = check_admissible(&f, &[0.0], &[0.0], ADMISSIBILITY_TOL).unwrap();
        assert!(benign.is_clean());
        assert!(benign.worst_violation <= 0.0);
    }

    #[test]
    fn current_violation_listed() {
        let f = feeder(&[(0, 1, 0.01, 0.01)], 0.25);
        let r = check_admissible(&f, &[0.6], &[0.0], ADMISSIBILITY_TOL).unwrap();
        assert!(r.voltage.is_empty());
        assert_eq!(r.current.len(), 1);
        let sol = solve_distflow(&f, &[0.6], &[0.0]).unwrap();
        assert_eq!(r.current[0].l, sol.l[0]);
        assert!(sol.l[0] > 0.25);
    }
}
