use gridmarket::program::{Backend, ConvexProgram, LinExpr, Sense, SolveStatus, VarBlock, FEASIBILITY_TOL};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Bounded program feasible at the origin: box `[-1, 2]^n`, rows `a'x <= b`
/// with `b > 0`, and `||F x||^2 <= 1`.
#[derive(Debug, Clone)]
struct Instance {
    n: usize,
    rows: Vec<(Vec<f64>, f64)>,
    factor: Vec<f64>,
    cost: Vec<f64>,
}

fn arb_instance() -> impl Strategy<Value = Instance> {
    (1usize..6).prop_flat_map(|n| {
        (
            prop::collection::vec((prop::collection::vec(-2.0..2.0f64, n), 0.1..2.0f64), 0..6),
            prop::collection::vec(-1.0..1.0f64, n * n),
            prop::collection::vec(-5.0..5.0f64, n),
        )
            .prop_map(move |(rows, factor, cost)| Instance { n, rows, factor, cost })
    })
}

fn build(inst: &Instance, scale: f64, sense: Sense) -> (ConvexProgram, VarBlock) {
    let mut p = ConvexProgram::new();
    let x = p.add_variable("x", inst.n, -1.0, 2.0);
    for (i, (a, b)) in inst.rows.iter().enumerate() {
        p.add_dense_ineq(format!("row{i}"), a, -b).unwrap();
    }
    let f = DMatrix::from_row_slice(inst.n, inst.n, &inst.factor);
    let args: Vec<LinExpr> = x.iter().map(LinExpr::var).collect();
    p.add_convex_quad("ball", &f, &args, LinExpr::constant(-1.0)).unwrap();
    let mut obj = LinExpr::default();
    for (v, c) in x.iter().zip(&inst.cost) {
        obj.add_term(v, c * scale);
    }
    p.set_objective(sense, obj).unwrap();
    (p, x)
}

fn original_objective(inst: &Instance, x: &[f64]) -> f64 {
    inst.cost.iter().zip(x).map(|(c, x)| c * x).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_scale_equivariance(inst in arb_instance(), alpha in prop::sample::select(vec![1e-3, 0.5, 7.0, 1e3])) {
        for sense in [Sense::Minimize, Sense::Maximize] {
            let (p1, x1) = build(&inst, 1.0, sense);
            let (pa, xa) = build(&inst, alpha, sense);
            let s1 = p1.solve().unwrap();
            let sa = pa.solve().unwrap();
            prop_assert_eq!(s1.status, SolveStatus::Optimal);
            prop_assert_eq!(sa.status, SolveStatus::Optimal);
            let f1 = original_objective(&inst, &s1.block(&x1));
            let fa = original_objective(&inst, &sa.block(&xa));
            let scale = f1.abs().max(1.0);
            prop_assert!((f1 - fa).abs() <= 1e-6 * scale, "{} vs {}", f1, fa);
            prop_assert!((sa.objective.unwrap() - alpha * f1).abs() <= 1e-6 * alpha * scale);
        }
    }

    #[test]
    fn optimal_points_pass_the_recheck(inst in arb_instance()) {
        let (p, _) = build(&inst, 1.0, Sense::Maximize);
        let s = p.solve().unwrap();
        prop_assert!(s.is_optimal());
        let x = s.values.as_ref().unwrap();
        prop_assert!(p.max_violation(x) < FEASIBILITY_TOL);
        prop_assert_eq!(s.stats.max_violation, Some(p.max_violation(x)));
        // reported objective agrees with recomputation
        let recomputed = p.objective().eval(x);
        prop_assert!((s.objective.unwrap() - recomputed).abs() <= 1e-6 * recomputed.abs().max(1.0));
    }

    #[test]
    fn solves_are_deterministic(inst in arb_instance()) {
        let (p, _) = build(&inst, 1.0, Sense::Minimize);
        let a = p.solve_with(Backend::Clarabel).unwrap();
        let b = p.solve_with(Backend::Clarabel).unwrap();
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.values, b.values);
    }
}

#[test]
fn recheck_measures_normalised_rows() {
    let mut p = ConvexProgram::new();
    let x = p.add_variable("x", 2, 0.0, 10.0);
    // 1000 x0 + 1000 x1 <= 1000  normalises to x0 + x1 <= 1
    p.add_dense_ineq("big", &[1000.0, 1000.0], -1000.0).unwrap();
    p.add_affine_eq("eq", LinExpr::var(x.at(0)).term(x.at(1), -1.0)).unwrap();
    assert!((p.max_violation(&[0.5, 0.5])).abs() < 1e-15);
    assert!((p.max_violation(&[0.6, 0.5]) - 0.1).abs() < 1e-12);
    assert!((p.max_violation(&[-0.5, -0.5]) - 0.5).abs() < 1e-12);
}

#[test]
fn lp_export_lists_every_row() {
    let inst =
        Instance { n: 2, rows: vec![(vec![1.0, 1.0], 1.0)], factor: vec![1.0, 0.0, 0.0, 1.0], cost: vec![1.0, 2.0] };
    let (p, _) = build(&inst, 1.0, Sense::Maximize);
    let text = p.to_lp_string();
    assert!(text.starts_with("maximize\n"));
    assert!(text.contains(" row0: "));
    assert!(text.contains(" ball: sumsq["));
    assert!(text.contains("-1 <= x[0] <= 2"));
    assert!(text.trim_end().ends_with("end"));
}

#[test]
fn backend_names() {
    assert_eq!(Backend::from_name("").unwrap(), Backend::Clarabel);
    assert!(Backend::from_name("mosek").is_err());
}
