//! Feeder, demand and bid file formats (JSON and CSV).
//!
//! Feeder JSON:
//! ```json
//! { "base_mva": 1.0, "base_kv": 4.8, "v0_pu2": 1.0,
//!   "nodes": [{ "id": 1, "v_min_pu2": 0.9025, "v_max_pu2": 1.1025,
//!               "p_load_mw": 0.1, "q_load_mvar": 0.05,
//!               "d_plus_mw": 0.0, "d_minus_mw": 0.0 }],
//!   "branches": [{ "from": 0, "to": 1, "r_pu": 0.01, "x_pu": 0.01, "l_max_pu2": 4.0 }] }
//! ```
//! Bids JSON:
//! ```json
//! { "aggregators": [{ "id": "agg1",
//!     "nodal": [{ "node": 3, "p_bid_mw": 0.5, "k_per_mw": 12.0 }] }] }
//! ```
//! The CSV mirrors carry one row per node / branch / bid entry; see
//! [`FeederCsvRow`] and [`BidCsvRow`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::InputError;
use crate::model::{
    AggregatorBid, Branch, DemandProfile, FeederModel, FeederSpec, PerUnit, DEFAULT_V_MAX, DEFAULT_V_MIN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Json,
    Csv,
}

impl FileFormat {
    /// Guess from the extension, defaulting to JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min_pu2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max_pu2: Option<f64>,
    #[serde(default)]
    pub p_load_mw: f64,
    #[serde(default)]
    pub q_load_mvar: f64,
    #[serde(default)]
    pub d_plus_mw: f64,
    #[serde(default)]
    pub d_minus_mw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BranchRecord {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
    pub l_max_pu2: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeederFile {
    pub base_mva: f64,
    pub base_kv: f64,
    pub v0_pu2: f64,
    pub nodes: Vec<NodeRecord>,
    pub branches: Vec<BranchRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodalBidRecord {
    pub node: usize,
    pub p_bid_mw: f64,
    pub k_per_mw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_bid_lower_mw: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregatorRecord {
    pub id: String,
    pub nodal: Vec<NodalBidRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BidsFile {
    pub aggregators: Vec<AggregatorRecord>,
}

/// Demand override file: same node fields as the feeder file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DemandFile {
    pub nodes: Vec<NodeRecord>,
}

/// One CSV row of a feeder file. `kind` is `meta`, `node` or `branch`;
/// unused columns stay empty.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct FeederCsvRow {
    pub kind: String,
    pub id: Option<usize>,
    pub from: Option<usize>,
    pub to: Option<usize>,
    pub r_pu: Option<f64>,
    pub x_pu: Option<f64>,
    pub l_max_pu2: Option<f64>,
    pub v_min_pu2: Option<f64>,
    pub v_max_pu2: Option<f64>,
    pub p_load_mw: Option<f64>,
    pub q_load_mvar: Option<f64>,
    pub d_plus_mw: Option<f64>,
    pub d_minus_mw: Option<f64>,
    pub base_mva: Option<f64>,
    pub base_kv: Option<f64>,
    pub v0_pu2: Option<f64>,
}

/// One CSV row of a bids file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BidCsvRow {
    pub aggregator: String,
    pub node: usize,
    pub p_bid_mw: f64,
    pub k_per_mw: f64,
    #[serde(default)]
    pub p_bid_lower_mw: Option<f64>,
}

fn read_text(path: &Path) -> Result<String, InputError> {
    fs::read_to_string(path).map_err(|source| InputError::Io { path: path.display().to_string(), source })
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> InputError {
    InputError::Parse { path: path.display().to_string(), message: e.to_string() }
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, InputError> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    rdr.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| parse_err(path, e))
}

impl FeederFile {
    pub fn read(path: &Path, format: FileFormat) -> Result<Self, InputError> {
        match format {
            FileFormat::Json => serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(path, e)),
            FileFormat::Csv => Self::from_csv_rows(read_csv(path)?).map_err(|e| match e {
                InputError::Invalid(m) => parse_err(path, m),
                other => other,
            }),
        }
    }

    fn from_csv_rows(rows: Vec<FeederCsvRow>) -> Result<Self, InputError> {
        let mut meta = None;
        let mut nodes = Vec::new();
        let mut branches = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            let missing = |col: &str| InputError::invalid(format!("row {}: missing {col}", i + 1));
            match row.kind.as_str() {
                "meta" => {
                    meta = Some((
                        row.base_mva.ok_or_else(|| missing("base_mva"))?,
                        row.base_kv.ok_or_else(|| missing("base_kv"))?,
                        row.v0_pu2.ok_or_else(|| missing("v0_pu2"))?,
                    ))
                }
                "node" => nodes.push(NodeRecord {
                    id: row.id.ok_or_else(|| missing("id"))?,
                    name: None,
                    v_min_pu2: row.v_min_pu2,
                    v_max_pu2: row.v_max_pu2,
                    p_load_mw: row.p_load_mw.unwrap_or(0.0),
                    q_load_mvar: row.q_load_mvar.unwrap_or(0.0),
                    d_plus_mw: row.d_plus_mw.unwrap_or(0.0),
                    d_minus_mw: row.d_minus_mw.unwrap_or(0.0),
                }),
                "branch" => branches.push(BranchRecord {
                    from: row.from.ok_or_else(|| missing("from"))?,
                    to: row.to.ok_or_else(|| missing("to"))?,
                    r_pu: row.r_pu.ok_or_else(|| missing("r_pu"))?,
                    x_pu: row.x_pu.ok_or_else(|| missing("x_pu"))?,
                    l_max_pu2: row.l_max_pu2,
                }),
                other => return Err(InputError::invalid(format!("row {}: unknown kind {other:?}", i + 1))),
            }
        }
        let (base_mva, base_kv, v0_pu2) = meta.ok_or_else(|| InputError::invalid("missing meta row"))?;
        Ok(FeederFile { base_mva, base_kv, v0_pu2, nodes, branches })
    }

    pub fn to_csv_rows(&self) -> Vec<FeederCsvRow> {
        let mut rows = vec![FeederCsvRow {
            kind: "meta".into(),
            base_mva: Some(self.base_mva),
            base_kv: Some(self.base_kv),
            v0_pu2: Some(self.v0_pu2),
            ..Default::default()
        }];
        for n in &self.nodes {
            rows.push(FeederCsvRow {
                kind: "node".into(),
                id: Some(n.id),
                v_min_pu2: n.v_min_pu2,
                v_max_pu2: n.v_max_pu2,
                p_load_mw: Some(n.p_load_mw),
                q_load_mvar: Some(n.q_load_mvar),
                d_plus_mw: Some(n.d_plus_mw),
                d_minus_mw: Some(n.d_minus_mw),
                ..Default::default()
            });
        }
        for b in &self.branches {
            rows.push(FeederCsvRow {
                kind: "branch".into(),
                from: Some(b.from),
                to: Some(b.to),
                r_pu: Some(b.r_pu),
                x_pu: Some(b.x_pu),
                l_max_pu2: b.l_max_pu2,
                ..Default::default()
            });
        }
        rows
    }

    /// Validates the file and converts it into the per-unit model plus the
    /// embedded demand.
    pub fn into_model(self) -> Result<(FeederModel, DemandProfile), InputError> {
        let n = self.branches.len();
        let mut by_id: BTreeMap<usize, &NodeRecord> = BTreeMap::new();
        for rec in &self.nodes {
            if rec.id > n {
                return Err(InputError::invalid(format!("node id {} outside 0..={n}; ids must be contiguous", rec.id)));
            }
            if by_id.insert(rec.id, rec).is_some() {
                return Err(InputError::invalid(format!("duplicate node id {}", rec.id)));
            }
        }
        if let Some(sub) = by_id.get(&0) {
            if sub.p_load_mw != 0.0 || sub.q_load_mvar != 0.0 || sub.d_plus_mw != 0.0 || sub.d_minus_mw != 0.0 {
                return Err(InputError::invalid("substation node 0 cannot carry demand"));
            }
        }
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return Err(InputError::invalid("base_mva must be positive"));
        }
        let pu = PerUnit::new(self.base_mva);
        let mut demand = DemandProfile::zero(n);
        let mut v_min = vec![DEFAULT_V_MIN; n];
        let mut v_max = vec![DEFAULT_V_MAX; n];
        let mut labels: Vec<String> = (0..=n).map(|k| k.to_string()).collect();
        for (&id, rec) in &by_id {
            if let Some(name) = &rec.name {
                labels[id] = name.clone();
            }
            if id == 0 {
                continue;
            }
            let k = id - 1;
            if let Some(v) = rec.v_min_pu2 {
                v_min[k] = v;
            }
            if let Some(v) = rec.v_max_pu2 {
                v_max[k] = v;
            }
            demand.p_load[k] = pu.mw_to_pu(rec.p_load_mw);
            demand.q_load[k] = pu.mw_to_pu(rec.q_load_mvar);
            demand.d_plus[k] = pu.mw_to_pu(rec.d_plus_mw);
            demand.d_minus[k] = pu.mw_to_pu(rec.d_minus_mw);
        }
        let mut branches = Vec::with_capacity(n);
        for b in &self.branches {
            let l_max = b.l_max_pu2.ok_or_else(|| {
                InputError::invalid(format!("branch ({},{}): l_max_pu2 is required (no safe default)", b.from, b.to))
            })?;
            branches.push(Branch { from: b.from, to: b.to, r: b.r_pu, x: b.x_pu, l_max });
        }
        let feeder = FeederModel::new(FeederSpec {
            node_count: n,
            branches,
            v0: self.v0_pu2,
            v_min,
            v_max,
            base_mva: self.base_mva,
            base_kv: self.base_kv,
            labels,
        })?;
        demand.validate(n)?;
        Ok((feeder, demand))
    }

    /// Inverse of [`FeederFile::into_model`].
    pub fn from_model(feeder: &FeederModel, demand: &DemandProfile) -> Self {
        let pu = feeder.per_unit();
        let root = (feeder.labels[0] != "0").then(|| NodeRecord {
            id: 0,
            name: Some(feeder.labels[0].clone()),
            v_min_pu2: None,
            v_max_pu2: None,
            p_load_mw: 0.0,
            q_load_mvar: 0.0,
            d_plus_mw: 0.0,
            d_minus_mw: 0.0,
        });
        let nodes = root
            .into_iter()
            .chain((1..=feeder.node_count).map(|id| {
                let k = id - 1;
                NodeRecord {
                    id,
                    name: (feeder.labels[id] != id.to_string()).then(|| feeder.labels[id].clone()),
                    v_min_pu2: Some(feeder.v_min[k]),
                    v_max_pu2: Some(feeder.v_max[k]),
                    p_load_mw: pu.pu_to_mw(demand.p_load[k]),
                    q_load_mvar: pu.pu_to_mw(demand.q_load[k]),
                    d_plus_mw: pu.pu_to_mw(demand.d_plus[k]),
                    d_minus_mw: pu.pu_to_mw(demand.d_minus[k]),
                }
            }))
            .collect();
        let branches = feeder
            .branches
            .iter()
            .map(|b| BranchRecord { from: b.from, to: b.to, r_pu: b.r, x_pu: b.x, l_max_pu2: Some(b.l_max) })
            .collect();
        FeederFile { base_mva: feeder.base_mva, base_kv: feeder.base_kv, v0_pu2: feeder.v0, nodes, branches }
    }
}

/// Loads and validates a feeder together with its embedded demand.
pub fn load_feeder_with_demand(path: &Path, format: FileFormat) -> Result<(FeederModel, DemandProfile), InputError> {
    FeederFile::read(path, format)?.into_model()
}

/// Loads and validates a feeder file.
pub fn load_feeder(path: &Path, format: FileFormat) -> Result<FeederModel, InputError> {
    load_feeder_with_demand(path, format).map(|(f, _)| f)
}

/// Reads a demand override file (JSON `{ "nodes": [...] }`, or the feeder CSV
/// row layout restricted to `node` rows). Nodes not listed keep zero demand.
pub fn load_demand(path: &Path, feeder: &FeederModel) -> Result<DemandProfile, InputError> {
    let nodes = match FileFormat::from_path(path) {
        FileFormat::Json => {
            serde_json::from_str::<DemandFile>(&read_text(path)?).map_err(|e| parse_err(path, e))?.nodes
        }
        FileFormat::Csv => read_csv::<FeederCsvRow>(path)?
            .into_iter()
            .filter(|r| r.kind == "node")
            .map(|r| {
                Ok(NodeRecord {
                    id: r.id.ok_or_else(|| parse_err(path, "node row without id"))?,
                    name: None,
                    v_min_pu2: None,
                    v_max_pu2: None,
                    p_load_mw: r.p_load_mw.unwrap_or(0.0),
                    q_load_mvar: r.q_load_mvar.unwrap_or(0.0),
                    d_plus_mw: r.d_plus_mw.unwrap_or(0.0),
                    d_minus_mw: r.d_minus_mw.unwrap_or(0.0),
                })
            })
            .collect::<Result<_, InputError>>()?,
    };
    let n = feeder.node_count;
    let pu = feeder.per_unit();
    let mut demand = DemandProfile::zero(n);
    for rec in nodes {
        let no_load = rec.p_load_mw == 0.0 && rec.q_load_mvar == 0.0 && rec.d_plus_mw == 0.0 && rec.d_minus_mw == 0.0;
        if rec.id == 0 && no_load {
            continue;
        }
        if rec.id == 0 || rec.id > n {
            return Err(InputError::invalid(format!("demand references unknown node {}", rec.id)));
        }
        let k = rec.id - 1;
        demand.p_load[k] = pu.mw_to_pu(rec.p_load_mw);
        demand.q_load[k] = pu.mw_to_pu(rec.q_load_mvar);
        demand.d_plus[k] = pu.mw_to_pu(rec.d_plus_mw);
        demand.d_minus[k] = pu.mw_to_pu(rec.d_minus_mw);
    }
    demand.validate(n)?;
    Ok(demand)
}

impl BidsFile {
    pub fn read(path: &Path, format: FileFormat) -> Result<Self, InputError> {
        match format {
            FileFormat::Json => serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(path, e)),
            FileFormat::Csv => {
                let rows: Vec<BidCsvRow> = read_csv(path)?;
                let mut aggs: Vec<AggregatorRecord> = Vec::new();
                for r in rows {
                    let rec = NodalBidRecord {
                        node: r.node,
                        p_bid_mw: r.p_bid_mw,
                        k_per_mw: r.k_per_mw,
                        p_bid_lower_mw: r.p_bid_lower_mw,
                    };
                    match aggs.iter_mut().find(|a| a.id == r.aggregator) {
                        Some(a) => a.nodal.push(rec),
                        None => aggs.push(AggregatorRecord { id: r.aggregator, nodal: vec![rec] }),
                    }
                }
                Ok(BidsFile { aggregators: aggs })
            }
        }
    }

    /// Validates against a feeder and converts capacities to p.u.
    pub fn into_bids(self, feeder: &FeederModel) -> Result<Vec<AggregatorBid>, InputError> {
        let n = feeder.node_count;
        let pu = feeder.per_unit();
        if self.aggregators.is_empty() {
            return Err(InputError::invalid("bids file lists no aggregators"));
        }
        let mut out: Vec<AggregatorBid> = Vec::with_capacity(self.aggregators.len());
        for agg in self.aggregators {
            if out.iter().any(|b| b.id == agg.id) {
                return Err(InputError::invalid(format!("duplicate aggregator id {}", agg.id)));
            }
            let has_lower = agg.nodal.iter().any(|r| r.p_bid_lower_mw.is_some());
            let mut bid = AggregatorBid {
                id: agg.id.clone(),
                p_bid: vec![0.0; n],
                p_bid_lower: has_lower.then(|| vec![0.0; n]),
                price: vec![0.0; n],
            };
            let mut seen = vec![false; n];
            for r in agg.nodal {
                if r.node == 0 || r.node > n {
                    return Err(InputError::invalid(format!(
                        "aggregator {}: bid references unknown node {}",
                        agg.id, r.node
                    )));
                }
                let k = r.node - 1;
                if std::mem::replace(&mut seen[k], true) {
                    return Err(InputError::invalid(format!("aggregator {}: node {} listed twice", agg.id, r.node)));
                }
                for (name, v) in [("p_bid_mw", r.p_bid_mw), ("k_per_mw", r.k_per_mw)]
                    .into_iter()
                    .chain(r.p_bid_lower_mw.map(|v| ("p_bid_lower_mw", v)))
                {
                    if !v.is_finite() || v < 0.0 {
                        return Err(InputError::invalid(format!(
                            "aggregator {}: node {}: {name} must be >= 0, got {v}",
                            agg.id, r.node
                        )));
                    }
                }
                bid.p_bid[k] = pu.mw_to_pu(r.p_bid_mw);
                bid.price[k] = r.k_per_mw;
                if let (Some(lower), Some(v)) = (bid.p_bid_lower.as_mut(), r.p_bid_lower_mw) {
                    lower[k] = pu.mw_to_pu(v);
                }
            }
            bid.validate(n)?;
            out.push(bid);
        }
        Ok(out)
    }

    pub fn from_bids(bids: &[AggregatorBid], feeder: &FeederModel) -> Self {
        let pu = feeder.per_unit();
        let aggregators = bids
            .iter()
            .map(|b| AggregatorRecord {
                id: b.id.clone(),
                nodal: (0..feeder.node_count)
                    .filter(|&k| {
                        b.p_bid[k] > 0.0 || b.price[k] > 0.0 || b.p_bid_lower.as_ref().is_some_and(|l| l[k] > 0.0)
                    })
                    .map(|k| NodalBidRecord {
                        node: k + 1,
                        p_bid_mw: pu.pu_to_mw(b.p_bid[k]),
                        k_per_mw: b.price[k],
                        p_bid_lower_mw: b.p_bid_lower.as_ref().map(|l| pu.pu_to_mw(l[k])),
                    })
                    .collect(),
            })
            .collect();
        BidsFile { aggregators }
    }
}

/// Loads bids and validates them against the feeder.
pub fn load_bids(path: &Path, format: FileFormat, feeder: &FeederModel) -> Result<Vec<AggregatorBid>, InputError> {
    BidsFile::read(path, format)?.into_bids(feeder)
}
