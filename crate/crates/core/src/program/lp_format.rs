use std::fmt::Write;

use super::{ConvexProgram, LinExpr, Sense};

fn expr(p: &ConvexProgram, e: &LinExpr) -> String {
    let mut out = String::new();
    for (k, &(j, c)) in e.terms.iter().enumerate() {
        let name = &p.vars[j].name;
        match (k, c < 0.0) {
            (0, true) => write!(out, "-{} {name}", -c),
            (0, false) => write!(out, "{c} {name}"),
            (_, true) => write!(out, " - {} {name}", -c),
            (_, false) => write!(out, " + {c} {name}"),
        }
        .unwrap();
    }
    if e.terms.is_empty() {
        write!(out, "{}", e.constant).unwrap();
    } else if e.constant != 0.0 {
        let sign = if e.constant < 0.0 { '-' } else { '+' };
        write!(out, " {sign} {}", e.constant.abs()).unwrap();
    }
    out
}

pub(super) fn write(p: &ConvexProgram) -> String {
    let mut s = String::new();
    let sense = match p.sense() {
        Sense::Minimize => "minimize",
        Sense::Maximize => "maximize",
    };
    writeln!(s, "{sense}\n obj: {}", expr(p, &p.objective)).unwrap();
    writeln!(s, "subject to").unwrap();
    for (label, e) in &p.eqs {
        writeln!(s, " {label}: {} = 0", expr(p, e)).unwrap();
    }
    for (label, e) in &p.ineqs {
        writeln!(s, " {label}: {} <= 0", expr(p, e)).unwrap();
    }
    for (label, q) in &p.quads {
        let f: Vec<String> = q.factor.iter().map(|f| format!("({})", expr(p, f))).collect();
        writeln!(s, " {label}: sumsq[ {} ] + {} <= 0", f.join(", "), expr(p, &q.linear)).unwrap();
    }
    for (label, c) in &p.cones {
        let t: Vec<String> = c.tail.iter().map(|f| format!("({})", expr(p, f))).collect();
        writeln!(s, " {label}: norm[ {} ] <= {}", t.join(", "), expr(p, &c.head)).unwrap();
    }
    writeln!(s, "bounds").unwrap();
    for v in &p.vars {
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (true, true) => writeln!(s, " {} <= {} <= {}", v.lower, v.name, v.upper),
            (true, false) => writeln!(s, " {} >= {}", v.name, v.lower),
            (false, true) => writeln!(s, " {} <= {}", v.name, v.upper),
            (false, false) => writeln!(s, " {} free", v.name),
        }
        .unwrap();
    }
    s.push_str("end\n");
    s
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn renders_all_sections() {
        let mut p = ConvexProgram::new();
        let x = p.add_variable("x", 2, 0.0, f64::INFINITY);
        p.add_affine_ineq("cap", LinExpr::var(x.at(0)).term(x.at(1), 1.0).plus(-3.0)).unwrap();
        p.add_affine_eq("tie", LinExpr::var(x.at(0)).term(x.at(1), -2.0)).unwrap();
        p.set_objective(Sense::Maximize, LinExpr::var(x.at(0))).unwrap();
        let text = p.to_lp_string();
        assert!(text.starts_with("maximize\n obj: 1 x[0]\n"));
        assert!(text.contains(" cap: 1 x[0] + 1 x[1] - 3 <= 0"));
        assert!(text.contains(" tie: 1 x[0] - 2 x[1] = 0"));
        assert!(text.contains(" x[1] >= 0"));
        assert!(text.ends_with("end\n"));
    }
}
