mod common;

use gridmarket::cia::{
    add_network_limits, build_cia_constraints, compute_operating_point, BranchPoint, CiaHandles, CiaOptions,
    InjectionBox,
};
use gridmarket::distflow::solve_distflow;
use gridmarket::hosting::{exact_max_injection_grid, max_injection, HostingMethod};
use gridmarket::market::{step2_allocate, MarketConfig, MarketContext};
use gridmarket::matrices::NetworkMatrices;
use gridmarket::program::{ConvexProgram, LinExpr, Sense, Solution};
use gridmarket::scenarios::{
    eight_node_scenario, ieee37_case1, ieee37_demand, ieee37_feeder, three_node_scenario, two_node_feeder,
};
use gridmarket::{DemandProfile, Direction, FeederModel, MarketScenario};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn l_of(x: &Vector3<f64>) -> f64 {
    (x[0] * x[0] + x[1] * x[1]) / x[2]
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1.0)
}

#[test]
fn taylor_data_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    for _ in 0..100 {
        let x = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.8..1.2));
        let pt = BranchPoint::new(x[0], x[1], x[2]);
        let j = pt.jacobian();
        let hess = pt.hessian();
        for i in 0..3 {
            let e = Vector3::from_fn(|k, _| if k == i { h } else { 0.0 });
            let fd = (l_of(&(x + e)) - l_of(&(x - e))) / (2.0 * h);
            assert!(close(j[i], fd, 1e-6), "J[{i}] {} vs {fd} at {x:?}", j[i]);
            let jp = BranchPoint::new(x[0] + e[0], x[1] + e[1], x[2] + e[2]).jacobian();
            let jm = BranchPoint::new(x[0] - e[0], x[1] - e[1], x[2] - e[2]).jacobian();
            let col = (jp - jm) / (2.0 * h);
            for r in 0..3 {
                assert!(close(hess[(r, i)], col[r], 1e-6), "H[{r}{i}] {} vs {} at {x:?}", hess[(r, i)], col[r]);
            }
        }
        assert!(close(pt.current(), l_of(&x), 1e-14));
    }
}

#[test]
fn hessian_psd_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let pt = BranchPoint::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.8..1.2));
        let eig = pt.hessian().symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10, "{eig:?}");
    }
}

fn constant_box(lower: &[f64], upper: &[f64], q: &[f64]) -> InjectionBox {
    InjectionBox {
        p_upper: upper.iter().map(|&x| LinExpr::constant(x)).collect(),
        p_lower: lower.iter().map(|&x| LinExpr::constant(x)).collect(),
        q: q.to_vec(),
    }
}

#[test]
fn ieee37_constraint_counts() {
    let f = ieee37_feeder();
    let d = ieee37_demand();
    let n = f.node_count;
    let m = NetworkMatrices::build(&f, f.order());
    let op = compute_operating_point(&f, &d).unwrap();
    let base: Vec<f64> = d.p_load.iter().map(|x| -x).collect();
    let q: Vec<f64> = d.q_load.iter().map(|x| -x).collect();
    let inj = constant_box(&base, &base, &q);

    let mut prog = ConvexProgram::new();
    build_cia_constraints(&mut prog, &m, f.v0, &op, &inj, &CiaOptions::default()).unwrap();
    let shape = prog.shape();
    assert_eq!(shape.variables, 9 * n);
    assert_eq!(shape.equalities, 7 * n);
    assert_eq!(shape.inequalities, 5 * n);
    assert_eq!(shape.quadratics, 8 * n);
    assert_eq!(prog.equality_labels().filter(|l| l.starts_with("l_lb_")).count(), n);
    assert_eq!(prog.inequality_labels().filter(|l| l.starts_with("t_lin_")).count(), 4 * n);
    assert_eq!(prog.inequality_labels().filter(|l| l.starts_with("l_ub_")).count(), n);

    let mut prog = ConvexProgram::new();
    let clamp = CiaOptions { clamp_lower_current: true };
    build_cia_constraints(&mut prog, &m, f.v0, &op, &inj, &clamp).unwrap();
    assert_eq!(prog.shape().inequalities, 6 * n);
}

#[test]
fn zero_demand_reduces_to_origin_forms() {
    let f = two_node_feeder(0.1, 0.1, 100.0);
    let op = compute_operating_point(&f, &DemandProfile::zero(1)).unwrap();
    let t = &op.branches[0];
    assert_eq!(t.l0, 0.0);
    assert_eq!(t.j, Vector3::zeros());
    assert_eq!(t.h, nalgebra::Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 0.0)));

    // with J = 0 the lower bound is exactly l0 = 0
    let m = NetworkMatrices::build(&f, f.order());
    let mut prog = ConvexProgram::new();
    let h =
        build_cia_constraints(&mut prog, &m, f.v0, &op, &constant_box(&[0.0], &[0.3], &[0.0]), &CiaOptions::default())
            .unwrap();
    prog.set_objective(Sense::Minimize, LinExpr::var(h.l_ub.at(0))).unwrap();
    let sol = prog.solve().unwrap();
    assert!(sol.is_optimal());
    assert!(sol.value(h.l_lb.at(0)).abs() < 1e-9);
    // psi = 2 max(P+^2, P-^2) from the diagonal form, and t picks it up
    let p_plus = sol.value(h.p_plus.at(0));
    let psi = 2.0 * p_plus * p_plus;
    assert!((sol.value(h.l_ub.at(0)) - psi).abs() < 1e-6, "{} vs {psi}", sol.value(h.l_ub.at(0)));
}

#[test]
fn two_node_inner_property() {
    for (r, x, l_max) in [(0.1, 0.1, 100.0), (0.05, 0.1, 100.0), (0.1, 0.1, 0.3)] {
        let f = two_node_feeder(r, x, l_max);
        let mut d = DemandProfile::zero(1);
        d.p_load = vec![0.2];
        d.q_load = vec![0.05];
        let cia = max_injection(&f, &d, &[3.0], HostingMethod::Cia).unwrap().total().unwrap();
        let exact = exact_max_injection_grid(&f, &d, 1, 1e-4, 3.0);
        assert!(cia <= exact + 1e-4, "cia {cia} exact {exact} for r={r} x={x}");
        assert!(cia > 0.0);
    }
}

/// Bound program around a fixed box with the tightest upper current bounds.
fn tight_bounds(f: &FeederModel, d: &DemandProfile, lower: &[f64], upper: &[f64]) -> (Solution, CiaHandles) {
    let m = NetworkMatrices::build(f, f.order());
    let op = compute_operating_point(f, d).unwrap();
    let q: Vec<f64> = d.q_load.iter().map(|x| -x).collect();
    let mut prog = ConvexProgram::new();
    let h = build_cia_constraints(&mut prog, &m, f.v0, &op, &constant_box(lower, upper, &q), &CiaOptions::default())
        .unwrap();
    let mut obj = LinExpr::default();
    for v in h.l_ub.iter() {
        obj.add_term(v, 1.0);
    }
    prog.set_objective(Sense::Minimize, obj).unwrap();
    let sol = prog.solve().unwrap();
    assert!(sol.is_optimal(), "{:?}", sol.status);
    (sol, h)
}

/// Checks sampled exact flows against the bounds. With `exact_upper` the exact
/// current must respect `l_ub`; otherwise only its second-order estimate must
/// (the bound is built from the second-order expansion, so far from the
/// operating point the third-order remainder in `v` can exceed it).
fn check_bounds(
    scn: &MarketScenario,
    lower: &[f64],
    upper: &[f64],
    samples: usize,
    seed: u64,
    exact_upper: bool,
) -> f64 {
    let f = &scn.feeder;
    let (sol, h) = tight_bounds(f, &scn.demand, lower, upper);
    let op = compute_operating_point(f, &scn.demand).unwrap();
    let q: Vec<f64> = scn.demand.q_load.iter().map(|x| -x).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-6;
    let mut gap: f64 = f64::NEG_INFINITY;
    for s in 0..samples {
        let p: Vec<f64> = lower
            .iter()
            .zip(upper)
            .map(|(&lo, &hi)| match s {
                0 => lo,
                1 => hi,
                _ if hi > lo => rng.random_range(lo..=hi),
                _ => lo,
            })
            .collect();
        let flow = solve_distflow(f, &p, &q).unwrap();
        for b in 0..f.node_count {
            let (lb, ub) = (sol.value(h.l_lb.at(b)), sol.value(h.l_ub.at(b)));
            assert!(flow.l[b] >= lb - tol, "branch {b}: l {} below {lb}", flow.l[b]);
            gap = gap.max(flow.l[b] - ub);
            if exact_upper {
                assert!(flow.l[b] <= ub + tol, "branch {b}: l {} above {ub}", flow.l[b]);
            } else {
                let t = &op.branches[b].point;
                let d = Vector3::new(flow.p[b] - t.p, flow.q[b] - t.q, flow.v[b] - t.v);
                let est = t.taylor_current(&d);
                assert!(est <= ub + tol, "branch {b}: estimate {est} above {ub}");
            }
            let (vm, vp) = (sol.value(h.v_minus.at(b)), sol.value(h.v_plus.at(b)));
            assert!(
                flow.v[b] >= vm - tol && flow.v[b] <= vp + tol,
                "node {}: v {} not in [{vm}, {vp}]",
                b + 1,
                flow.v[b]
            );
        }
    }
    gap
}

fn assert_sound(scn: &MarketScenario, lower: &[f64], upper: &[f64], samples: usize, seed: u64) {
    check_bounds(scn, lower, upper, samples, seed, true);
}

fn allocated_box(scn: &MarketScenario) -> (Vec<f64>, Vec<f64>) {
    let ctx = MarketContext::new(scn).unwrap();
    let alloc = step2_allocate(scn, &ctx, &MarketConfig::default()).unwrap();
    let base: Vec<f64> = scn.demand.p_load.iter().map(|x| -x).collect();
    let far: Vec<f64> = base.iter().zip(alloc.nodal_allocation_pu()).map(|(b, a)| b + a).collect();
    match scn.direction {
        Direction::Upper => (base, far),
        Direction::Lower => {
            let near: Vec<f64> = base.iter().zip(alloc.nodal_allocation_pu()).map(|(b, a)| b - a).collect();
            (near, base)
        }
    }
}

#[test]
fn bounds_are_sound_on_allocated_boxes() {
    for (i, scn) in [three_node_scenario(), eight_node_scenario(), ieee37_case1()].into_iter().enumerate() {
        let (lo, hi) = allocated_box(&scn);
        assert_sound(&scn, &lo, &hi, 200, i as u64);
    }
    let lower = three_node_scenario().with_direction(Direction::Lower);
    let (lo, hi) = allocated_box(&lower);
    assert_sound(&lower, &lo, &hi, 200, 9);
}

#[test]
fn bounds_are_sound_on_random_boxes() {
    let scn = eight_node_scenario();
    let base: Vec<f64> = scn.demand.p_load.iter().map(|x| -x).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..10 {
        let lo: Vec<f64> = base.iter().map(|b| b - rng.random_range(0.0..0.2)).collect();
        let hi: Vec<f64> = base.iter().map(|b| b + rng.random_range(0.0..0.4)).collect();
        check_bounds(&scn, &lo, &hi, 100, trial, false);
    }
}

#[test]
fn exact_current_stays_near_second_order_bound() {
    // a box reaching deep into extra load on a leaf branch, where the exact
    // current may overshoot the second-order bound by a third-order term
    let scn = eight_node_scenario();
    let base: Vec<f64> = scn.demand.p_load.iter().map(|x| -x).collect();
    let mut lo = base.clone();
    lo[7] -= 0.2;
    let hi: Vec<f64> = base.iter().map(|b| b + 0.1).collect();
    let gap = check_bounds(&scn, &lo, &hi, 100, 0, false);
    assert!(gap < 2e-3, "gap {gap}");
}

#[test]
fn limits_make_allocation_admissible_on_two_node() {
    // with a tight current limit the CIA respects it and the exact flow agrees
    let f = two_node_feeder(0.1, 0.1, 0.3);
    let d = DemandProfile::zero(1);
    let res = max_injection(&f, &d, &[3.0], HostingMethod::Cia).unwrap();
    let x = res.injection.unwrap()[0];
    let flow = solve_distflow(&f, &[x], &[0.0]).unwrap();
    assert!(flow.l[0] <= 0.3 + 1e-6);

    let m = NetworkMatrices::build(&f, f.order());
    let op = compute_operating_point(&f, &d).unwrap();
    let mut prog = ConvexProgram::new();
    let inj = constant_box(&[0.0], &[x], &[0.0]);
    let h = build_cia_constraints(&mut prog, &m, f.v0, &op, &inj, &CiaOptions::default()).unwrap();
    add_network_limits(&mut prog, &f, &h).unwrap();
    prog.set_objective(Sense::Minimize, LinExpr::default()).unwrap();
    assert!(prog.solve().unwrap().is_optimal());
}
