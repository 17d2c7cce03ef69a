//! Feeder, demand, and bid data model.
//!
//! Everything inside the library is per-unit: powers on `base_mva`, `v` is the
//! squared voltage magnitude (p.u.^2) and `l` the squared branch current
//! (p.u.^2). MW and $/MW appear only at the I/O boundary, see [`PerUnit`].

use serde::{Deserialize, Serialize};

use crate::error::InputError;
use crate::topology::{radial_layout, TreeLayout};

/// Default squared-voltage band when a file omits limits: [0.95^2, 1.05^2].
pub const DEFAULT_V_MIN: f64 = 0.95 * 0.95;
pub const DEFAULT_V_MAX: f64 = 1.05 * 1.05;

/// Per-unit conversions for a given MVA base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnit {
    pub base_mva: f64,
}

impl PerUnit {
    pub fn new(base_mva: f64) -> Self {
        PerUnit { base_mva }
    }
    pub fn mw_to_pu(&self, mw: f64) -> f64 {
        mw / self.base_mva
    }
    pub fn pu_to_mw(&self, pu: f64) -> f64 {
        pu * self.base_mva
    }
    /// $/MW -> $ per p.u. of power.
    pub fn price_to_pu(&self, per_mw: f64) -> f64 {
        per_mw * self.base_mva
    }
    pub fn price_from_pu(&self, per_pu: f64) -> f64 {
        per_pu / self.base_mva
    }
    pub fn watts_to_pu(&self, watts: f64) -> f64 {
        watts / (self.base_mva * 1e6)
    }
}

/// A feeder branch, oriented parent -> child. Branch `b` of a
/// [`FeederModel`] always has `to == b + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub l_max: f64,
}

impl Branch {
    /// |z|^2
    pub fn z2(&self) -> f64 {
        self.r * self.r + self.x * self.x
    }
}

/// Validated radial feeder. Node 0 is the substation; nodes `1..=N` carry
/// load and flexibility.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    pub node_count: usize,
    /// Branch `b` feeds node `b + 1`.
    pub branches: Vec<Branch>,
    /// Squared substation voltage.
    pub v0: f64,
    /// Per node `1..=N`, stored at index `node - 1`.
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub base_mva: f64,
    pub base_kv: f64,
    /// Optional display labels, index `node`.
    pub labels: Vec<String>,
    layout: TreeLayout,
}

/// Raw feeder description before validation.
#[derive(Debug, Clone, Default)]
pub struct FeederSpec {
    pub node_count: usize,
    pub branches: Vec<Branch>,
    pub v0: f64,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub base_mva: f64,
    pub base_kv: f64,
    pub labels: Vec<String>,
}

impl FeederModel {
    /// Validates and normalises a feeder: branches are re-oriented parent ->
    /// child and re-indexed by child node.
    pub fn new(spec: FeederSpec) -> Result<Self, InputError> {
        let n = spec.node_count;
        if n == 0 {
            return Err(InputError::invalid("feeder has no non-substation nodes"));
        }
        if !(spec.base_mva.is_finite() && spec.base_mva > 0.0) {
            return Err(InputError::invalid("base_mva must be positive"));
        }
        if !(spec.base_kv.is_finite() && spec.base_kv > 0.0) {
            return Err(InputError::invalid("base_kv must be positive"));
        }
        if spec.v_min.len() != n || spec.v_max.len() != n {
            return Err(InputError::invalid(format!("voltage limit vectors must have length {n}")));
        }
        for k in 0..n {
            let (lo, hi) = (spec.v_min[k], spec.v_max[k]);
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                return Err(InputError::invalid(format!("node {}: need 0 < v_min < v_max, got [{lo}, {hi}]", k + 1)));
            }
        }
        let lo = spec.v_min.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = spec.v_max.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(spec.v0.is_finite() && spec.v0 >= lo && spec.v0 <= hi) {
            return Err(InputError::invalid(format!("substation v0 = {} outside [{lo}, {hi}]", spec.v0)));
        }
        for br in &spec.branches {
            if !(br.r.is_finite() && br.x.is_finite() && br.r >= 0.0) {
                return Err(InputError::invalid(format!(
                    "branch ({},{}): r must be finite and nonnegative",
                    br.from, br.to
                )));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(InputError::invalid(format!("branch ({},{}): zero impedance", br.from, br.to)));
            }
            if !(br.l_max.is_finite() && br.l_max > 0.0) {
                return Err(InputError::invalid(format!("branch ({},{}): l_max must be positive", br.from, br.to)));
            }
        }
        let edges: Vec<(usize, usize)> = spec.branches.iter().map(|b| (b.from, b.to)).collect();
        let layout = radial_layout(n, &edges)?;

        let mut branches = vec![None; n];
        for br in &spec.branches {
            let child = if layout.parent[br.to] == br.from && br.to != 0 { br.to } else { br.from };
            branches[child - 1] = Some(Branch { from: layout.parent[child], to: child, ..*br });
        }
        let branches = branches.into_iter().map(|b| b.expect("tree has one parent branch per node")).collect();

        let mut labels = spec.labels;
        if labels.len() != n + 1 {
            labels = (0..=n).map(|k| k.to_string()).collect();
        }
        Ok(FeederModel {
            node_count: n,
            branches,
            v0: spec.v0,
            v_min: spec.v_min,
            v_max: spec.v_max,
            base_mva: spec.base_mva,
            base_kv: spec.base_kv,
            labels,
            layout,
        })
    }

    pub fn per_unit(&self) -> PerUnit {
        PerUnit::new(self.base_mva)
    }

    pub fn layout(&self) -> &TreeLayout {
        &self.layout
    }

    /// Parent node of `node` (1-based).
    pub fn parent(&self, node: usize) -> usize {
        self.layout.parent[node]
    }

    /// Non-substation nodes in root-to-leaf order.
    pub fn order(&self) -> &[usize] {
        &self.layout.order
    }

    pub fn to_spec(&self) -> FeederSpec {
        FeederSpec {
            node_count: self.node_count,
            branches: self.branches.clone(),
            v0: self.v0,
            v_min: self.v_min.clone(),
            v_max: self.v_max.clone(),
            base_mva: self.base_mva,
            base_kv: self.base_kv,
            labels: self.labels.clone(),
        }
    }
}

/// Background demand and its robust deviation bounds, all in p.u.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemandProfile {
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub d_plus: Vec<f64>,
    pub d_minus: Vec<f64>,
}

impl DemandProfile {
    pub fn zero(n: usize) -> Self {
        DemandProfile { p_load: vec![0.0; n], q_load: vec![0.0; n], d_plus: vec![0.0; n], d_minus: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.p_load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_load.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<(), InputError> {
        for (name, v) in
            [("p_load", &self.p_load), ("q_load", &self.q_load), ("d_plus", &self.d_plus), ("d_minus", &self.d_minus)]
        {
            if v.len() != n {
                return Err(InputError::invalid(format!("demand vector {name} has length {}, expected {n}", v.len())));
            }
            if let Some(k) = v.iter().position(|x| !x.is_finite()) {
                return Err(InputError::invalid(format!("demand {name} at node {} is not finite", k + 1)));
            }
        }
        for (name, v) in [("d_plus", &self.d_plus), ("d_minus", &self.d_minus)] {
            if let Some(k) = v.iter().position(|&x| x < 0.0) {
                return Err(InputError::invalid(format!("{name} at node {} is negative", k + 1)));
            }
        }
        Ok(())
    }
}

/// One Aggregator's nodal offer, stored per-unit.
///
/// `p_bid[k]` is the upward capacity at node `k + 1`; `p_bid_lower` the
/// optional downward capacity (a nonnegative magnitude). `price` is in $/MW.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorBid {
    pub id: String,
    pub p_bid: Vec<f64>,
    pub p_bid_lower: Option<Vec<f64>>,
    pub price: Vec<f64>,
}

impl AggregatorBid {
    pub fn validate(&self, n: usize) -> Result<(), InputError> {
        if self.p_bid.len() != n || self.price.len() != n {
            return Err(InputError::invalid(format!("aggregator {}: bid vectors must have length {n}", self.id)));
        }
        let mut all = vec![("p_bid", &self.p_bid), ("price", &self.price)];
        if let Some(lower) = &self.p_bid_lower {
            if lower.len() != n {
                return Err(InputError::invalid(format!("aggregator {}: p_bid_lower must have length {n}", self.id)));
            }
            all.push(("p_bid_lower", lower));
        }
        for (name, v) in all {
            for (k, &x) in v.iter().enumerate() {
                if !x.is_finite() || x < 0.0 {
                    return Err(InputError::invalid(format!(
                        "aggregator {}: {name} at node {} must be finite and >= 0, got {x}",
                        self.id,
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Capacity offered in the given direction (p.u.).
    pub fn capacity(&self, direction: Direction) -> Option<&[f64]> {
        match direction {
            Direction::Upper => Some(&self.p_bid),
            Direction::Lower => self.p_bid_lower.as_deref(),
        }
    }
}

/// Which side of the flexibility range is being cleared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Upper,
    Lower,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::Upper => f.write_str("upper"),
            Direction::Lower => f.write_str("lower"),
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = InputError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "upper" => Ok(Direction::Upper),
            "lower" => Ok(Direction::Lower),
            _ => Err(InputError::invalid(format!("unknown direction {s:?}"))),
        }
    }
}

/// Everything one market run needs.
#[derive(Debug, Clone)]
pub struct MarketScenario {
    pub feeder: FeederModel,
    pub demand: DemandProfile,
    pub bids: Vec<AggregatorBid>,
    pub direction: Direction,
    /// Slack tolerance in watts.
    pub epsilon_watts: f64,
    pub robust: bool,
}

impl MarketScenario {
    pub fn new(feeder: FeederModel, demand: DemandProfile, bids: Vec<AggregatorBid>) -> Result<Self, InputError> {
        let s =
            MarketScenario { feeder, demand, bids, direction: Direction::Upper, epsilon_watts: 10.0, robust: false };
        s.validate()?;
        Ok(s)
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn with_robust(mut self, robust: bool) -> Self {
        self.robust = robust;
        self
    }

    pub fn with_epsilon_watts(mut self, eps: f64) -> Self {
        self.epsilon_watts = eps;
        self
    }

    pub fn validate(&self) -> Result<(), InputError> {
        let n = self.feeder.node_count;
        self.demand.validate(n)?;
        if self.bids.is_empty() {
            return Err(InputError::invalid("scenario needs at least one bid"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.bids {
            b.validate(n)?;
            if !seen.insert(b.id.as_str()) {
                return Err(InputError::invalid(format!("duplicate aggregator id {}", b.id)));
            }
        }
        if !(self.epsilon_watts.is_finite() && self.epsilon_watts > 0.0) {
            return Err(InputError::invalid("epsilon must be positive"));
        }
        Ok(())
    }

    pub fn epsilon_pu(&self) -> f64 {
        self.feeder.per_unit().watts_to_pu(self.epsilon_watts)
    }

    /// Total offered capacity per node in the scenario's direction (p.u.).
    pub fn total_offer(&self) -> Vec<f64> {
        let n = self.feeder.node_count;
        let mut total = vec![0.0; n];
        for b in &self.bids {
            if let Some(cap) = b.capacity(self.direction) {
                for (t, c) in total.iter_mut().zip(cap) {
                    *t += c;
                }
            }
        }
        total
    }

    /// True when some aggregator offers capacity in the scenario's direction.
    pub fn has_offers(&self) -> bool {
        self.bids.iter().any(|b| b.capacity(self.direction).is_some())
    }

    /// Nodes (1-based) where some aggregator offers positive capacity.
    pub fn flexible_nodes(&self) -> Vec<usize> {
        self.total_offer().iter().enumerate().filter(|(_, &c)| c > 0.0).map(|(k, _)| k + 1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn two_node() -> FeederModel {
        FeederModel::new(FeederSpec {
            node_count: 1,
            branches: vec![Branch { from: 0, to: 1, r: 0.1, x: 0.1, l_max: 10.0 }],
            v0: 1.0,
            v_min: vec![DEFAULT_V_MIN],
            v_max: vec![DEFAULT_V_MAX],
            base_mva: 1.0,
            base_kv: 12.47,
            labels: vec![],
        })
        .unwrap()
    }

    #[test]
    fn smallest_feeder() {
        let f = two_node();
        assert_eq!(f.node_count, 1);
        assert_eq!(f.branches.len(), 1);
        assert_eq!(f.labels, vec!["0", "1"]);
    }

    #[test]
    fn branches_reoriented_by_child() {
        let f = FeederModel::new(FeederSpec {
            node_count: 2,
            branches: vec![
                Branch { from: 2, to: 1, r: 0.2, x: 0.1, l_max: 1.0 },
                Branch { from: 1, to: 0, r: 0.1, x: 0.1, l_max: 1.0 },
            ],
            v0: 1.0,
            v_min: vec![0.9; 2],
            v_max: vec![1.1; 2],
            base_mva: 1.0,
            base_kv: 1.0,
            labels: vec![],
        })
        .unwrap();
        assert_eq!((f.branches[0].from, f.branches[0].to), (0, 1));
        assert_eq!((f.branches[1].from, f.branches[1].to), (1, 2));
        assert_eq!(f.branches[1].r, 0.2);
    }

    #[test]
    fn rejects_bad_limits() {
        let mut spec = two_node().to_spec();
        spec.v_min = vec![1.2];
        assert!(FeederModel::new(spec).is_err());
        let mut spec = two_node().to_spec();
        spec.branches[0].l_max = 0.0;
        assert!(FeederModel::new(spec).is_err());
        let mut spec = two_node().to_spec();
        spec.branches[0].r = 0.0;
        spec.branches[0].x = 0.0;
        assert!(FeederModel::new(spec).is_err());
        let mut spec = two_node().to_spec();
        spec.v0 = 1.5;
        assert!(FeederModel::new(spec).is_err());
        let mut spec = two_node().to_spec();
        spec.base_mva = 0.0;
        assert!(FeederModel::new(spec).is_err());
    }

    #[test]
    fn negative_price_rejected() {
        let bid = AggregatorBid { id: "a".into(), p_bid: vec![1.0], p_bid_lower: None, price: vec![-1.0] };
        assert!(bid.validate(1).is_err());
        let zero = AggregatorBid { price: vec![3.0], p_bid: vec![0.0], ..bid };
        assert!(zero.validate(1).is_ok());
    }

    proptest! {
        #[test]
        fn per_unit_round_trip(base in 0.01f64..1000.0, x in -1e4f64..1e4) {
            let pu = PerUnit::new(base);
            let back = pu.pu_to_mw(pu.mw_to_pu(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
            let back = pu.price_from_pu(pu.price_to_pu(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
