#![allow(dead_code)]

use gridmarket::model::{Branch, FeederSpec, DEFAULT_V_MAX, DEFAULT_V_MIN};
use gridmarket::FeederModel;
use proptest::prelude::*;

/// Radial feeder where node `k` hangs below `parents[k - 1] < k`.
pub fn tree(parents: &[usize], r: &[f64], x: &[f64]) -> FeederModel {
    let n = parents.len();
    FeederModel::new(FeederSpec {
        node_count: n,
        branches: (0..n).map(|k| Branch { from: parents[k], to: k + 1, r: r[k], x: x[k], l_max: 100.0 }).collect(),
        v0: 1.0,
        v_min: vec![DEFAULT_V_MIN; n],
        v_max: vec![DEFAULT_V_MAX; n],
        base_mva: 1.0,
        base_kv: 1.0,
        labels: vec![],
    })
    .unwrap()
}

pub fn path(n: usize) -> FeederModel {
    let parents: Vec<usize> = (0..n).collect();
    tree(&parents, &vec![0.01; n], &vec![0.02; n])
}

pub fn star(n: usize) -> FeederModel {
    tree(&vec![0; n], &vec![0.01; n], &vec![0.02; n])
}

/// Random radial feeder with `n` nodes and per-branch impedances.
pub fn arb_feeder(max_nodes: usize) -> impl Strategy<Value = FeederModel> {
    (1..=max_nodes).prop_flat_map(|n| {
        (
            (0..n).map(|k| 0..=k).collect::<Vec<_>>(),
            prop::collection::vec(0.001..0.03f64, n),
            prop::collection::vec(0.001..0.03f64, n),
        )
            .prop_map(|(parents, r, x)| tree(&parents, &r, &x))
    })
}

/// Walks parent pointers: `reach[b][k]` is true when node `k + 1` sits in the
/// subtree rooted at node `b + 1`.
pub fn reachability(feeder: &FeederModel) -> Vec<Vec<bool>> {
    let n = feeder.node_count;
    let mut reach = vec![vec![false; n]; n];
    for k in 1..=n {
        let mut node = k;
        while node != 0 {
            reach[node - 1][k - 1] = true;
            node = feeder.branches[node - 1].from;
        }
    }
    reach
}
