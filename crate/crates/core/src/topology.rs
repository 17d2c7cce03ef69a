//! Radial tree checks on the feeder graph.

use std::collections::VecDeque;

use crate::error::InputError;
use crate::model::FeederModel;

/// Parent/child structure of a validated tree rooted at the substation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeLayout {
    /// Non-substation nodes, every parent before its children.
    pub order: Vec<usize>,
    /// `parent[k]` is the parent node of node `k`; `parent[0]` is 0.
    pub parent: Vec<usize>,
    /// Children of each node in ascending order.
    pub children: Vec<Vec<usize>>,
}

impl TreeLayout {
    /// Depth of every node (substation = 0).
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.parent.len()];
        for &k in &self.order {
            depth[k] = depth[self.parent[k]] + 1;
        }
        depth
    }
}

/// Checks that the undirected edge list over nodes `0..=n` is a spanning tree
/// and returns a breadth-first layout rooted at node 0.
pub fn radial_layout(n: usize, edges: &[(usize, usize)]) -> Result<TreeLayout, InputError> {
    if edges.len() != n {
        return Err(InputError::NotRadial(format!(
            "{} branches for {} non-substation nodes (a radial feeder needs exactly {})",
            edges.len(),
            n,
            n
        )));
    }
    let mut adj = vec![Vec::new(); n + 1];
    for &(a, b) in edges {
        if a > n || b > n {
            return Err(InputError::invalid(format!("branch ({a},{b}) references a node outside 0..={n}")));
        }
        if a == b {
            return Err(InputError::NotRadial(format!("self-loop at node {a}")));
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
    }

    let mut parent = vec![usize::MAX; n + 1];
    let mut children = vec![Vec::new(); n + 1];
    let mut order = Vec::with_capacity(n);
    parent[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        let mut parent_edge_seen = false;
        for &w in &adj[u] {
            if u != 0 && w == parent[u] && !parent_edge_seen {
                parent_edge_seen = true;
                continue;
            }
            if parent[w] != usize::MAX {
                return Err(InputError::NotRadial(format!("cycle detected through branch ({u},{w})")));
            }
            parent[w] = u;
            children[u].push(w);
            order.push(w);
            queue.push_back(w);
        }
    }
    if let Some(k) = (0..=n).find(|&k| parent[k] == usize::MAX) {
        return Err(InputError::NotRadial(format!("node {k} is disconnected from the substation")));
    }
    Ok(TreeLayout { order, parent, children })
}

/// Topological (root-to-leaf) order of the feeder's non-substation nodes.
pub fn validate_radial(feeder: &FeederModel) -> Result<Vec<usize>, InputError> {
    let edges: Vec<(usize, usize)> = feeder.branches.iter().map(|b| (b.from, b.to)).collect();
    radial_layout(feeder.node_count, &edges).map(|t| t.order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_order() {
        let t = radial_layout(2, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(t.order, vec![1, 2]);
        assert_eq!(t.parent, vec![0, 0, 1]);
    }

    #[test]
    fn star_is_depth_one() {
        let t = radial_layout(3, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let mut o = t.order.clone();
        o.sort();
        assert_eq!(o, vec![1, 2, 3]);
        assert!(t.depths()[1..].iter().all(|&d| d == 1));
    }

    #[test]
    fn reversed_edges_are_accepted() {
        let t = radial_layout(2, &[(2, 1), (1, 0)]).unwrap();
        assert_eq!(t.order, vec![1, 2]);
    }

    #[test]
    fn triangle_is_rejected() {
        let err = radial_layout(2, &[(0, 1), (1, 2), (2, 0)]).unwrap_err();
        assert!(err.to_string().contains("not radial"), "{err}");
    }

    #[test]
    fn cycle_with_right_edge_count() {
        // 3 edges over 4 nodes, but 1-2-3 forms a cycle and node 0 is cut off.
        let err = radial_layout(3, &[(1, 2), (2, 3), (3, 1)]).unwrap_err();
        assert!(matches!(err, InputError::NotRadial(_)));
        let err = radial_layout(3, &[(0, 1), (1, 2), (2, 1)]).unwrap_err();
        assert!(matches!(err, InputError::NotRadial(_)));
    }

    #[test]
    fn out_of_range_node() {
        assert!(radial_layout(1, &[(0, 5)]).is_err());
    }
}
