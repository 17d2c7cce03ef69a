//! Built-in feeders and market scenarios.
//!
//! The 37-node feeder is a balanced single-phase equivalent of the IEEE
//! 37-node test feeder: positive-sequence line impedances (mean self minus
//! mean mutual of each cable configuration), the in-line transformer to node
//! 775, and three-phase totals of the spot loads. The substation transformer
//! and regulator are omitted; node 799 is held at 1.0 p.u. Bid magnitudes and prices are illustrative;
//! they are chosen so the market exercises slack, clearing and robust paths.

use crate::model::{
    AggregatorBid, Branch, DemandProfile, FeederModel, FeederSpec, MarketScenario, PerUnit, DEFAULT_V_MAX,
    DEFAULT_V_MIN,
};

const FT_PER_MILE: f64 = 5280.0;
pub const IEEE37_BASE_KV: f64 = 4.8;
pub const IEEE37_BASE_MVA: f64 = 1.0;

/// Positive-sequence impedance (ohm/mile) and ampacity (A) per cable configuration.
fn cable(config: u32) -> ((f64, f64), f64) {
    // (self_aa, self_bb, mutual_ab, mutual_ac) as (r, x) pairs; aa = cc, ab = bc
    let (aa, bb, ab, ac, amps) = match config {
        721 => ((0.2926, 0.1973), (0.2646, 0.1900), (0.0673, -0.0368), (0.0337, -0.0417), 698.0),
        722 => ((0.4751, 0.2973), (0.4488, 0.2678), (0.1629, -0.0326), (0.1234, -0.0607), 482.0),
        723 => ((1.2936, 0.6713), (1.3022, 0.6326), (0.4871, 0.2111), (0.4585, 0.1521), 230.0),
        724 => ((2.0952, 0.7758), (1.9912, 0.6944), (0.5204, 0.2738), (0.4926, 0.2123), 156.0),
        other => panic!("unknown cable configuration {other}"),
    };
    let self_mean = ((2.0 * aa.0 + bb.0) / 3.0, (2.0 * aa.1 + bb.1) / 3.0);
    let mutual_mean = ((2.0 * ab.0 + ac.0) / 3.0, (2.0 * ab.1 + ac.1) / 3.0);
    ((self_mean.0 - mutual_mean.0, self_mean.1 - mutual_mean.1), amps)
}

/// (from, to, length ft, configuration); configuration 0 is the transformer.
const IEEE37_SEGMENTS: [(&str, &str, f64, u32); 36] = [
    ("799", "701", 1850.0, 721),
    ("701", "702", 960.0, 722),
    ("702", "705", 400.0, 724),
    ("702", "713", 360.0, 723),
    ("702", "703", 1320.0, 722),
    ("703", "727", 240.0, 724),
    ("703", "730", 600.0, 723),
    ("704", "714", 80.0, 724),
    ("704", "720", 800.0, 723),
    ("705", "742", 320.0, 724),
    ("705", "712", 240.0, 724),
    ("706", "725", 280.0, 724),
    ("707", "724", 760.0, 724),
    ("707", "722", 120.0, 724),
    ("708", "733", 320.0, 723),
    ("708", "732", 320.0, 724),
    ("709", "731", 600.0, 723),
    ("709", "708", 320.0, 723),
    ("710", "735", 200.0, 724),
    ("710", "736", 1280.0, 724),
    ("711", "741", 400.0, 723),
    ("711", "740", 200.0, 724),
    ("713", "704", 520.0, 723),
    ("714", "718", 520.0, 724),
    ("720", "707", 920.0, 724),
    ("720", "706", 600.0, 723),
    ("727", "744", 280.0, 723),
    ("730", "709", 200.0, 723),
    ("733", "734", 560.0, 723),
    ("734", "737", 640.0, 723),
    ("734", "710", 520.0, 724),
    ("737", "738", 400.0, 723),
    ("738", "711", 400.0, 723),
    ("744", "728", 200.0, 724),
    ("744", "729", 280.0, 724),
    ("709", "775", 0.0, 0),
];

/// Three-phase totals of the spot loads (kW, kvar).
const IEEE37_LOADS: [(&str, f64, f64); 25] = [
    ("701", 630.0, 315.0),
    ("712", 85.0, 40.0),
    ("713", 85.0, 40.0),
    ("714", 38.0, 18.0),
    ("718", 85.0, 40.0),
    ("720", 85.0, 40.0),
    ("722", 161.0, 80.0),
    ("724", 42.0, 21.0),
    ("725", 42.0, 21.0),
    ("727", 42.0, 21.0),
    ("728", 126.0, 63.0),
    ("729", 42.0, 21.0),
    ("730", 85.0, 40.0),
    ("731", 85.0, 40.0),
    ("732", 42.0, 21.0),
    ("733", 85.0, 40.0),
    ("734", 42.0, 21.0),
    ("735", 85.0, 40.0),
    ("736", 42.0, 21.0),
    ("737", 140.0, 70.0),
    ("738", 126.0, 62.0),
    ("740", 85.0, 40.0),
    ("741", 42.0, 21.0),
    ("742", 93.0, 44.0),
    ("744", 42.0, 21.0),
];

/// Substation transformer XFM-1: 500 kVA, R = 0.09 %, X = 1.81 % on its own base.
const XFM_KVA: f64 = 500.0;
const XFM_R: f64 = 0.0009;
const XFM_X: f64 = 0.0181;

/// Node names in index order (index 0 is the substation).
fn ieee37_names() -> Vec<&'static str> {
    let mut names = vec!["799"];
    // breadth-first from the substation so parents precede children
    let mut k = 0;
    while k < names.len() {
        let parent = names[k];
        for &(from, to, _, _) in &IEEE37_SEGMENTS {
            if from == parent && !names.contains(&to) {
                names.push(to);
            }
        }
        k += 1;
    }
    names
}

/// Index of a named node of the 37-node feeder.
pub fn ieee37_node(name: &str) -> usize {
    ieee37_names().iter().position(|&n| n == name).unwrap_or_else(|| panic!("no node {name} in the 37-node feeder"))
}

pub fn ieee37_feeder() -> FeederModel {
    let names = ieee37_names();
    let idx = |s: &str| names.iter().position(|&n| n == s).unwrap();
    let z_base = IEEE37_BASE_KV * IEEE37_BASE_KV / IEEE37_BASE_MVA;
    let i_base = IEEE37_BASE_MVA * 1e3 / (3f64.sqrt() * IEEE37_BASE_KV);
    let branches = IEEE37_SEGMENTS
        .iter()
        .map(|&(from, to, ft, config)| {
            let (r, x, l_max) = if config == 0 {
                let scale = IEEE37_BASE_MVA * 1e3 / XFM_KVA;
                let rated = XFM_KVA / (IEEE37_BASE_MVA * 1e3);
                (XFM_R * scale, XFM_X * scale, rated * rated)
            } else {
                let ((r, x), amps) = cable(config);
                let miles = ft / FT_PER_MILE;
                (r * miles / z_base, x * miles / z_base, (amps / i_base).powi(2))
            };
            Branch { from: idx(from), to: idx(to), r, x, l_max }
        })
        .collect();
    let n = names.len() - 1;
    FeederModel::new(FeederSpec {
        node_count: n,
        branches,
        v0: 1.0,
        v_min: vec![DEFAULT_V_MIN; n],
        v_max: vec![DEFAULT_V_MAX; n],
        base_mva: IEEE37_BASE_MVA,
        base_kv: IEEE37_BASE_KV,
        labels: names.iter().map(|s| s.to_string()).collect(),
    })
    .expect("built-in feeder is valid")
}

/// Flexible nodes of the case studies.
pub const IEEE37_FLEX_NODES: [&str; 8] = ["701", "712", "713", "727", "730", "733", "737", "738"];

/// Worst-case background-demand deviation at the flexible nodes (MW).
pub const IEEE37_DEVIATION_MW: [f64; 8] = [0.2, 0.1, 0.02, 0.1, 0.2, 0.03, 0.02, 0.03];

pub fn ieee37_demand() -> DemandProfile {
    let pu = PerUnit::new(IEEE37_BASE_MVA);
    let n = ieee37_names().len() - 1;
    let mut d = DemandProfile::zero(n);
    for &(name, kw, kvar) in &IEEE37_LOADS {
        let k = ieee37_node(name) - 1;
        d.p_load[k] = pu.mw_to_pu(kw / 1e3);
        d.q_load[k] = pu.mw_to_pu(kvar / 1e3);
    }
    for (name, dev) in IEEE37_FLEX_NODES.iter().zip(IEEE37_DEVIATION_MW) {
        let k = ieee37_node(name) - 1;
        d.d_plus[k] = pu.mw_to_pu(dev);
        d.d_minus[k] = pu.mw_to_pu(dev);
    }
    d
}

/// Offer sizes (MW) of the four aggregators at the flexible nodes.
const CASE1_BIDS_MW: [[f64; 8]; 4] = [
    [0.30, 0.30, 0.30, 0.20, 0.40, 0.30, 0.30, 0.30],
    [0.50, 0.40, 0.20, 0.30, 0.30, 0.20, 0.40, 0.20],
    [0.20, 0.20, 0.30, 0.20, 0.30, 0.40, 0.20, 0.30],
    [0.30, 0.30, 0.20, 0.30, 0.20, 0.30, 0.30, 0.20],
];

/// Prices in $/kW, same layout.
const CASE2_PRICES_PER_KW: [[f64; 8]; 4] = [
    [9.5, 8.2, 11.4, 7.1, 12.9, 6.4, 10.2, 5.8],
    [6.8, 4.9, 5.5, 9.7, 3.60, 7.6, 4.1, 6.9],
    [14.2, 11.8, 9.9, 12.5, 21.0, 10.3, 13.6, 9.1],
    [3.9, 6.1, 2.7, 4.4, 1.3, 3.3, 5.2, 2.4],
];

fn case_bids(prices_per_kw: &[[f64; 8]; 4]) -> Vec<AggregatorBid> {
    let pu = PerUnit::new(IEEE37_BASE_MVA);
    let n = ieee37_names().len() - 1;
    (0..4)
        .map(|m| {
            let mut p_bid = vec![0.0; n];
            let mut price = vec![0.0; n];
            for (j, name) in IEEE37_FLEX_NODES.iter().enumerate() {
                let k = ieee37_node(name) - 1;
                p_bid[k] = pu.mw_to_pu(CASE1_BIDS_MW[m][j]);
                price[k] = prices_per_kw[m][j] * 1e3;
            }
            AggregatorBid { id: format!("A{}", m + 1), p_bid, p_bid_lower: None, price }
        })
        .collect()
}

/// Case 1: every aggregator quotes a uniform price across its nodes.
pub fn ieee37_case1() -> MarketScenario {
    let uniform: [[f64; 8]; 4] = [[8.0; 8], [5.0; 8], [12.0; 8], [3.0; 8]];
    MarketScenario::new(ieee37_feeder(), ieee37_demand(), case_bids(&uniform)).expect("valid scenario")
}

/// Case 2: node-dependent prices.
pub fn ieee37_case2() -> MarketScenario {
    MarketScenario::new(ieee37_feeder(), ieee37_demand(), case_bids(&CASE2_PRICES_PER_KW)).expect("valid scenario")
}

/// Case 2 with the worst-case demand deviation reserved.
pub fn ieee37_robust() -> MarketScenario {
    ieee37_case2().with_robust(true)
}

fn simple_feeder(edges: &[(usize, usize, f64, f64, f64)], v0: f64) -> FeederModel {
    let n = edges.len();
    FeederModel::new(FeederSpec {
        node_count: n,
        branches: edges.iter().map(|&(from, to, r, x, l_max)| Branch { from, to, r, x, l_max }).collect(),
        v0,
        v_min: vec![DEFAULT_V_MIN; n],
        v_max: vec![DEFAULT_V_MAX; n],
        base_mva: 1.0,
        base_kv: 1.0,
        labels: vec![],
    })
    .expect("built-in feeder is valid")
}

/// One branch from the substation to node 1.
pub fn two_node_feeder(r: f64, x: f64, l_max: f64) -> FeederModel {
    simple_feeder(&[(0, 1, r, x, l_max)], 1.0)
}

/// Substation, a junction and two laterals.
pub fn three_node_feeder() -> FeederModel {
    simple_feeder(&[(0, 1, 0.01, 0.02, 9.0), (1, 2, 0.03, 0.02, 1.0), (1, 3, 0.02, 0.03, 1.0)], 1.0)
}

/// Eight nodes on a trunk with two laterals.
pub fn eight_node_feeder() -> FeederModel {
    simple_feeder(
        &[
            (0, 1, 0.005, 0.010, 16.0),
            (1, 2, 0.010, 0.012, 9.0),
            (2, 3, 0.012, 0.010, 4.0),
            (3, 4, 0.015, 0.010, 2.0),
            (2, 5, 0.020, 0.015, 1.5),
            (5, 6, 0.020, 0.010, 1.0),
            (1, 7, 0.015, 0.020, 2.0),
            (7, 8, 0.020, 0.020, 1.0),
        ],
        1.0,
    )
}

fn bid(id: &str, n: usize, offers: &[(usize, f64, f64)]) -> AggregatorBid {
    let mut p_bid = vec![0.0; n];
    let mut price = vec![0.0; n];
    for &(node, mw, k) in offers {
        p_bid[node - 1] = mw;
        price[node - 1] = k;
    }
    AggregatorBid { id: id.into(), p_bid, p_bid_lower: None, price }
}

pub fn three_node_scenario() -> MarketScenario {
    let feeder = three_node_feeder();
    let mut demand = DemandProfile::zero(3);
    demand.p_load = vec![0.2, 0.3, 0.2];
    demand.q_load = vec![0.1, 0.1, 0.1];
    demand.d_plus = vec![0.0, 0.05, 0.05];
    demand.d_minus = vec![0.0, 0.05, 0.05];
    let bids =
        vec![bid("A1", 3, &[(2, 1.2, 4000.0), (3, 0.8, 3000.0)]), bid("A2", 3, &[(2, 0.6, 2500.0), (3, 1.0, 5000.0)])];
    let mut scn = MarketScenario::new(feeder, demand, bids).expect("valid scenario");
    for b in &mut scn.bids {
        b.p_bid_lower = Some(b.p_bid.iter().map(|x| x * 0.5).collect());
    }
    scn
}

pub fn eight_node_scenario() -> MarketScenario {
    let feeder = eight_node_feeder();
    let mut demand = DemandProfile::zero(8);
    demand.p_load = vec![0.1, 0.2, 0.15, 0.1, 0.2, 0.1, 0.15, 0.1];
    demand.q_load = demand.p_load.iter().map(|p| p * 0.4).collect();
    demand.d_plus = vec![0.0, 0.0, 0.0, 0.05, 0.0, 0.05, 0.0, 0.05];
    demand.d_minus = demand.d_plus.clone();
    let bids = vec![
        bid("A1", 8, &[(4, 0.8, 6000.0), (6, 0.5, 4000.0), (8, 0.6, 3500.0)]),
        bid("A2", 8, &[(4, 0.5, 3000.0), (6, 0.7, 5500.0), (3, 0.6, 2000.0)]),
        bid("A3", 8, &[(8, 0.4, 7000.0), (5, 0.5, 2500.0)]),
    ];
    MarketScenario::new(feeder, demand, bids).expect("valid scenario")
}

/// Names accepted by [`named_scenario`].
pub const SCENARIO_NAMES: [&str; 5] = ["ieee37-case1", "ieee37-case2", "ieee37-robust", "three-node", "eight-node"];

pub fn named_scenario(name: &str) -> Option<MarketScenario> {
    Some(match name {
        "ieee37-case1" => ieee37_case1(),
        "ieee37-case2" => ieee37_case2(),
        "ieee37-robust" => ieee37_robust(),
        "three-node" => three_node_scenario(),
        "eight-node" => eight_node_scenario(),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ieee37_shape() {
        let f = ieee37_feeder();
        assert_eq!(f.node_count, 36);
        let names = ieee37_names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 37);
        let d = ieee37_demand();
        let total_kw: f64 = d.p_load.iter().sum::<f64>() * 1e3;
        assert!((total_kw - 2457.0).abs() < 1e-9);
    }

    #[test]
    fn impedance_spot_checks() {
        // hand-computed: z1 = mean(self) - mean(mutual), times miles, over 23.04 ohm
        let f = ieee37_feeder();
        let check = |to: &str, r: f64, x: f64| {
            let b = &f.branches[ieee37_node(to) - 1];
            assert!((b.r - r).abs() < 1e-12, "{to}: r {} vs {r}", b.r);
            assert!((b.x - x).abs() < 1e-12, "{to}: x {} vs {x}", b.x);
        };
        check("701", 0.003_454_617_244_493_547_5, 0.003_547_889_375_526_095);
        check("713", 0.002_423_354_640_151_515, 0.001_381_885_258_838_384_1);
        check("736", 0.016_302_609_427_609_43, 0.005_212_191_358_024_692);
        let xfm = &f.branches[ieee37_node("775") - 1];
        assert!((xfm.r - 0.0018).abs() < 1e-15 && (xfm.x - 0.0362).abs() < 1e-15);
        assert!((xfm.l_max - 0.25).abs() < 1e-15);
    }

    #[test]
    fn named_scenarios_resolve() {
        for name in SCENARIO_NAMES {
            assert!(named_scenario(name).is_some(), "{name}");
        }
        assert!(named_scenario("nope").is_none());
    }
}
