//! Topology and sensitivity matrices of the vectorised branch-flow model.
//!
//! Branch `b` shares the index of its child node (`b + 1`), so every matrix
//! here is square `N x N`:
//!
//! ```text
//! P = C p - D_R l          Q = C q - D_X l
//! V = v0 1 + M_p p + M_q q - H l
//! ```

use nalgebra::{DMatrix, DVector};

use crate::model::FeederModel;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMatrices {
    /// Incidence matrix `(N+1) x N`: `+1` at the parent, `-1` at the child.
    pub incidence: DMatrix<f64>,
    /// `A[b][c] = 1` iff branch `c` hangs directly below branch `b`.
    pub a: DMatrix<f64>,
    /// `C = (I - A)^-1`; `C[b][k] = 1` iff node `k+1` is in the subtree below branch `b`.
    pub c: DMatrix<f64>,
    pub r: DVector<f64>,
    pub x: DVector<f64>,
    pub z2: DVector<f64>,
    pub d_r: DMatrix<f64>,
    pub d_x: DMatrix<f64>,
    pub m_p: DMatrix<f64>,
    pub m_q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub d_x_plus: DMatrix<f64>,
    pub d_x_minus: DMatrix<f64>,
    pub h_plus: DMatrix<f64>,
    pub h_minus: DMatrix<f64>,
}

/// Elementwise split `M = M_plus + M_minus` with `M_plus >= 0 >= M_minus`.
pub fn sign_split(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|v| v.max(0.0)), m.map(|v| v.min(0.0)))
}

impl NetworkMatrices {
    /// Builds every matrix for a validated feeder. `order` must list the
    /// non-substation nodes parent-first (see [`crate::topology::validate_radial`]).
    pub fn build(feeder: &FeederModel, order: &[usize]) -> Self {
        let n = feeder.node_count;
        assert_eq!(order.len(), n, "topological order must cover every node");

        let mut incidence = DMatrix::zeros(n + 1, n);
        let mut a = DMatrix::zeros(n, n);
        for (b, br) in feeder.branches.iter().enumerate() {
            incidence[(br.from, b)] = 1.0;
            incidence[(br.to, b)] = -1.0;
            if br.from != 0 {
                a[(br.from - 1, b)] = 1.0;
            }
        }

        // C = I + C A, i.e. column k = e_k + column of k's parent branch.
        // I - A is triangular under the topological order, so one pass suffices.
        let mut c = DMatrix::zeros(n, n);
        for &node in order {
            let k = node - 1;
            let parent = feeder.branches[k].from;
            if parent != 0 {
                let col = c.column(parent - 1).clone_owned();
                c.set_column(k, &col);
            }
            c[(k, k)] = 1.0;
        }

        let r = DVector::from_iterator(n, feeder.branches.iter().map(|b| b.r));
        let x = DVector::from_iterator(n, feeder.branches.iter().map(|b| b.x));
        let z2 = DVector::from_iterator(n, feeder.branches.iter().map(|b| b.z2()));
        let rd = DMatrix::from_diagonal(&r);
        let xd = DMatrix::from_diagonal(&x);
        let zd = DMatrix::from_diagonal(&z2);

        let ca = &c * &a;
        let d_r = &ca * &rd;
        let d_x = &ca * &xd;
        let ct = c.transpose();
        let m_p = (&ct * &rd * &c) * 2.0;
        let m_q = (&ct * &xd * &c) * 2.0;
        let h = &ct * ((&rd * &d_r + &xd * &d_x) * 2.0 + &zd);
        let (d_x_plus, d_x_minus) = sign_split(&d_x);
        let (h_plus, h_minus) = sign_split(&h);

        NetworkMatrices { incidence, a, c, r, x, z2, d_r, d_x, m_p, m_q, h, d_x_plus, d_x_minus, h_plus, h_minus }
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    /// LinDist voltages `v0 1 + M_p p + M_q q`.
    pub fn lindist_voltage(&self, v0: f64, p: &[f64], q: &[f64]) -> DVector<f64> {
        let p = DVector::from_column_slice(p);
        let q = DVector::from_column_slice(q);
        DVector::from_element(self.dim(), v0) + &self.m_p * p + &self.m_q * q
    }

    /// Named matrices for debug dumps.
    pub fn named(&self) -> Vec<(&'static str, &DMatrix<f64>)> {
        vec![
            ("B", &self.incidence),
            ("A", &self.a),
            ("C", &self.c),
            ("D_R", &self.d_r),
            ("D_X", &self.d_x),
            ("M_p", &self.m_p),
            ("M_q", &self.m_q),
            ("H", &self.h),
            ("D_X_plus", &self.d_x_plus),
            ("D_X_minus", &self.d_x_minus),
            ("H_plus", &self.h_plus),
            ("H_minus", &self.h_minus),
        ]
    }
}

/// Renders a matrix as CSV (no header).
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
