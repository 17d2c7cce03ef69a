//! Hosting capacity under three network models, and the sweep that compares
//! their claims against the exact power flow.
//!
//! * LinDist: lossless linear voltages, voltage limits only.
//! * SOCP: branch-flow model with `l v >= P^2 + Q^2` relaxed to a cone
//!   (an outer approximation).
//! * CIA: the convex inner approximation (every answer is admissible).

use serde::Serialize;

use crate::cia::{add_network_limits, build_cia_constraints, compute_operating_point, CiaOptions, InjectionBox};
use crate::distflow::{solve_distflow, violations, ADMISSIBILITY_TOL};
use crate::error::MarketError;
use crate::matrices::NetworkMatrices;
use crate::model::{DemandProfile, FeederModel};
use crate::program::{ConvexProgram, LinExpr, Sense, SolveStatus, VarBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HostingMethod {
    LinDist,
    Socp,
    Cia,
}

impl HostingMethod {
    pub const ALL: [HostingMethod; 3] = [HostingMethod::LinDist, HostingMethod::Socp, HostingMethod::Cia];

    pub fn name(&self) -> &'static str {
        match self {
            HostingMethod::LinDist => "lindist",
            HostingMethod::Socp => "socp",
            HostingMethod::Cia => "cia",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostingResult {
    pub method: HostingMethod,
    pub status: SolveStatus,
    /// Flexible injection per node (p.u.), present when optimal.
    pub injection: Option<Vec<f64>>,
}

impl HostingResult {
    pub fn total(&self) -> Option<f64> {
        self.injection.as_ref().map(|x| x.iter().sum())
    }
}

fn injection_vars(program: &mut ConvexProgram, caps: &[f64]) -> VarBlock {
    let zeros = vec![0.0; caps.len()];
    program.add_variable_bounded("x", &zeros, caps).expect("caps and zeros have equal length")
}

fn total(x: &VarBlock) -> LinExpr {
    let mut e = LinExpr::default();
    for v in x.iter() {
        e.add_term(v, 1.0);
    }
    e
}

/// Maximises total flexible injection `sum x` with `0 <= x <= caps` on top of
/// the background demand.
pub fn max_injection(
    feeder: &FeederModel,
    demand: &DemandProfile,
    caps: &[f64],
    method: HostingMethod,
) -> Result<HostingResult, MarketError> {
    let n = feeder.node_count;
    demand.validate(n)?;
    if caps.len() != n {
        return Err(crate::error::ProgramError::DimensionMismatch { expected: n, got: caps.len() }.into());
    }
    let mut prog = ConvexProgram::new();
    let x = injection_vars(&mut prog, caps);
    match method {
        HostingMethod::LinDist => lindist_rows(&mut prog, feeder, demand, &x)?,
        HostingMethod::Socp => socp_rows(&mut prog, feeder, demand, &x)?,
        HostingMethod::Cia => {
            let m = NetworkMatrices::build(feeder, feeder.order());
            let op = compute_operating_point(feeder, demand)?;
            let inj = InjectionBox {
                p_upper: (0..n).map(|k| LinExpr::var(x.at(k)).plus(-demand.p_load[k])).collect(),
                p_lower: demand.p_load.iter().map(|l| LinExpr::constant(-l)).collect(),
                q: demand.q_load.iter().map(|l| -l).collect(),
            };
            let h = build_cia_constraints(&mut prog, &m, feeder.v0, &op, &inj, &CiaOptions::default())?;
            add_network_limits(&mut prog, feeder, &h)?;
        }
    }
    prog.set_objective(Sense::Maximize, total(&x))?;
    let sol = prog.solve()?;
    Ok(HostingResult { method, status: sol.status, injection: sol.is_optimal().then(|| sol.block(&x)) })
}

fn lindist_rows(
    prog: &mut ConvexProgram,
    feeder: &FeederModel,
    demand: &DemandProfile,
    x: &VarBlock,
) -> Result<(), MarketError> {
    let n = feeder.node_count;
    let m = NetworkMatrices::build(feeder, feeder.order());
    let p0: Vec<f64> = demand.p_load.iter().map(|l| -l).collect();
    let q0: Vec<f64> = demand.q_load.iter().map(|l| -l).collect();
    let base = m.lindist_voltage(feeder.v0, &p0, &q0);
    for k in 0..n {
        let mut v = LinExpr::constant(base[k]);
        for c in 0..n {
            v.add_term(x.at(c), m.m_p[(k, c)]);
        }
        prog.add_affine_ineq(format!("v_max_{k}"), v.clone().plus(-feeder.v_max[k]))?;
        prog.add_affine_ineq(format!("v_min_{k}"), v.scaled(-1.0).plus(feeder.v_min[k]))?;
    }
    Ok(())
}

fn socp_rows(
    prog: &mut ConvexProgram,
    feeder: &FeederModel,
    demand: &DemandProfile,
    x: &VarBlock,
) -> Result<(), MarketError> {
    let n = feeder.node_count;
    let free = (f64::NEG_INFINITY, f64::INFINITY);
    let p = prog.add_variable("P", n, free.0, free.1);
    let q = prog.add_variable("Q", n, free.0, free.1);
    let v = prog.add_variable_bounded("v", &feeder.v_min, &feeder.v_max)?;
    let l_max: Vec<f64> = feeder.branches.iter().map(|b| b.l_max).collect();
    let l = prog.add_variable_bounded("l", &vec![0.0; n], &l_max)?;

    // P_b = x_b - P_L,b + sum_children (P_c - r_c l_c), same for Q
    let mut bal_p: Vec<LinExpr> =
        (0..n).map(|b| LinExpr::var(p.at(b)).term(x.at(b), -1.0).plus(demand.p_load[b])).collect();
    let mut bal_q: Vec<LinExpr> = (0..n).map(|b| LinExpr::var(q.at(b)).plus(demand.q_load[b])).collect();
    for (c, br) in feeder.branches.iter().enumerate() {
        if br.from != 0 {
            let parent = br.from - 1;
            bal_p[parent].add_term(p.at(c), -1.0);
            bal_p[parent].add_term(l.at(c), br.r);
            bal_q[parent].add_term(q.at(c), -1.0);
            bal_q[parent].add_term(l.at(c), br.x);
        }
    }
    for (b, (ep, eq)) in bal_p.into_iter().zip(bal_q).enumerate() {
        prog.add_affine_eq(format!("bal_p_{b}"), ep)?;
        prog.add_affine_eq(format!("bal_q_{b}"), eq)?;
    }
    for (b, br) in feeder.branches.iter().enumerate() {
        let mut e = LinExpr::var(v.at(b)).term(p.at(b), -2.0 * br.r).term(q.at(b), -2.0 * br.x).term(l.at(b), br.z2());
        if br.from == 0 {
            e.constant -= feeder.v0;
        } else {
            e.add_term(v.at(br.from - 1), -1.0);
        }
        prog.add_affine_eq(format!("volt_{b}"), e)?;
        // l v >= P^2 + Q^2  <=>  ||(2P, 2Q, l - v)|| <= l + v
        prog.add_cone(
            format!("cone_{b}"),
            LinExpr::var(l.at(b)).term(v.at(b), 1.0),
            vec![
                LinExpr::default().term(p.at(b), 2.0),
                LinExpr::default().term(q.at(b), 2.0),
                LinExpr::var(l.at(b)).term(v.at(b), -1.0),
            ],
        )?;
    }
    Ok(())
}

/// Largest single-node injection (on a grid of `step`) for which the exact
/// power flow respects every limit. Scans upward from 0 and stops at the first
/// inadmissible point or at `upper`.
pub fn exact_max_injection_grid(
    feeder: &FeederModel,
    demand: &DemandProfile,
    node: usize,
    step: f64,
    upper: f64,
) -> f64 {
    let n = feeder.node_count;
    let q: Vec<f64> = demand.q_load.iter().map(|l| -l).collect();
    let admissible = |s: f64| {
        let mut p: Vec<f64> = demand.p_load.iter().map(|l| -l).collect();
        p[node - 1] += s;
        solve_distflow(feeder, &p, &q).is_ok_and(|sol| violations(feeder, &sol, 0.0).is_clean())
    };
    assert!(node >= 1 && node <= n);
    let steps = (upper / step).floor() as usize;
    let mut best = f64::NAN;
    for i in 0..=steps {
        let s = i as f64 * step;
        if admissible(s) {
            best = s;
        } else {
            break;
        }
    }
    best
}

/// One row of the comparison sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub p_max_mw: f64,
    pub method: String,
    pub status: String,
    pub claimed_injection_mw: Option<f64>,
    /// Largest squared voltage of the exact power flow at the claimed injection.
    pub max_voltage_pu2: Option<f64>,
    pub admissible: Option<bool>,
}

/// For every `P_max` in `grid_mw`, caps each node in `nodes` at `P_max` and
/// records each method's claimed hosting capacity and the exact maximum
/// voltage it would produce. `exact-oracle` injects the full caps.
pub fn compare_sweep(
    feeder: &FeederModel,
    demand: &DemandProfile,
    nodes: &[usize],
    grid_mw: &[f64],
) -> Vec<CompareRow> {
    let n = feeder.node_count;
    let pu = feeder.per_unit();
    let q: Vec<f64> = demand.q_load.iter().map(|l| -l).collect();
    let judge = |x: &[f64]| {
        let p: Vec<f64> = x.iter().zip(&demand.p_load).map(|(x, l)| x - l).collect();
        match solve_distflow(feeder, &p, &q) {
            Ok(sol) => (Some(sol.max_voltage()), Some(violations(feeder, &sol, ADMISSIBILITY_TOL).is_clean())),
            Err(_) => (None, Some(false)),
        }
    };
    let mut rows = Vec::new();
    for &p_max in grid_mw {
        let mut caps = vec![0.0; n];
        for &k in nodes {
            caps[k - 1] = pu.mw_to_pu(p_max);
        }
        for method in HostingMethod::ALL {
            let row = match max_injection(feeder, demand, &caps, method) {
                Ok(res) => match &res.injection {
                    Some(x) => {
                        let (vmax, ok) = judge(x);
                        CompareRow {
                            p_max_mw: p_max,
                            method: method.name().into(),
                            status: res.status.to_string(),
                            claimed_injection_mw: Some(pu.pu_to_mw(x.iter().sum())),
                            max_voltage_pu2: vmax,
                            admissible: ok,
                        }
                    }
                    None => CompareRow {
                        p_max_mw: p_max,
                        method: method.name().into(),
                        status: res.status.to_string(),
                        claimed_injection_mw: None,
                        max_voltage_pu2: None,
                        admissible: None,
                    },
                },
                Err(e) => CompareRow {
                    p_max_mw: p_max,
                    method: method.name().into(),
                    status: format!("error: {e}"),
                    claimed_injection_mw: None,
                    max_voltage_pu2: None,
                    admissible: None,
                },
            };
            rows.push(row);
        }
        let (vmax, ok) = judge(&caps);
        rows.push(CompareRow {
            p_max_mw: p_max,
            method: "exact-oracle".into(),
            status: if vmax.is_some() { "solved" } else { "not-converged" }.into(),
            claimed_injection_mw: Some(pu.pu_to_mw(caps.iter().sum())),
            max_voltage_pu2: vmax,
            admissible: ok,
        });
    }
    rows
}
