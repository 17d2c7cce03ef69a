//! Two-step flexibility market: feasibility check with per-node slack, then
//! price-weighted allocation, nodal clearing prices and DNO revenue.
//!
//! Every program certifies a whole box of dispatch through the CIA. For the
//! upper direction the box runs from the background demand (`p = -P_L`) up to
//! the offered or allocated flexibility; the lower direction mirrors it.

use serde::Serialize;

use crate::audit::AuditBox;
use crate::cia::{
    add_network_limits, build_cia_constraints, compute_operating_point, CiaOptions, InjectionBox, OperatingPoint,
};
use crate::error::{InputError, MarketError};
use crate::matrices::NetworkMatrices;
use crate::model::{Direction, MarketScenario};
use crate::program::{ConvexProgram, LinExpr, ProgramShape, Sense, SolveStats, SolveStatus, Var, VarBlock};

/// Allocations at or below this (MW) do not set prices.
pub const PRICE_THRESHOLD_MW: f64 = 1e-6;

/// How the nodal clearing price is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PricingRule {
    /// Lowest price among aggregators holding a positive allocation.
    #[default]
    LowestAccepted,
    /// Classical uniform-price reading: the highest price among offers that
    /// were (partly) rejected; falls back to the lowest accepted price when
    /// nothing was rejected.
    HighestRejected,
}

impl std::str::FromStr for PricingRule {
    type Err = InputError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lowest-accepted" => Ok(PricingRule::LowestAccepted),
            "highest-rejected" => Ok(PricingRule::HighestRejected),
            _ => Err(InputError::invalid(format!("unknown pricing rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketConfig {
    pub pricing: PricingRule,
    pub price_threshold_mw: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig { pricing: PricingRule::LowestAccepted, price_threshold_mw: PRICE_THRESHOLD_MW }
    }
}

/// Matrices and operating point shared by both steps of one run.
#[derive(Debug, Clone)]
pub struct MarketContext {
    pub matrices: NetworkMatrices,
    pub op: OperatingPoint,
}

impl MarketContext {
    pub fn new(scn: &MarketScenario) -> Result<Self, MarketError> {
        scn.validate()?;
        Ok(MarketContext {
            matrices: NetworkMatrices::build(&scn.feeder, scn.feeder.order()),
            op: compute_operating_point(&scn.feeder, &scn.demand)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityResult {
    pub direction: Direction,
    pub robust: bool,
    pub slack_pu: Vec<f64>,
    pub slack_mw: Vec<f64>,
    pub max_slack_mw: f64,
    pub epsilon_mw: f64,
    pub feasible: bool,
    pub stats: SolveStats,
    pub shape: ProgramShape,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationResult {
    pub direction: Direction,
    pub robust: bool,
    pub pricing_rule: PricingRule,
    pub aggregators: Vec<String>,
    /// `[aggregator][node - 1]`, MW.
    pub allocation_mw: Vec<Vec<f64>>,
    #[serde(skip)]
    pub allocation_pu: Vec<Vec<f64>>,
    pub bid_mw: Vec<Vec<f64>>,
    /// `[aggregator][node - 1]`, $/MW.
    pub price: Vec<Vec<f64>>,
    /// Per node; absent where nothing was allocated.
    pub clearing_price: Vec<Option<f64>>,
    pub revenue: f64,
    pub nodal_fraction: Vec<Option<f64>>,
    pub aggregator_fraction: Vec<Option<f64>>,
    pub total_allocation_mw: f64,
    /// Optimal value of the price-weighted allocation ($).
    pub objective: f64,
    /// Nodes (1-based) where equal-priced offers leave room for other optima.
    pub tie_nodes: Vec<usize>,
    pub stats: SolveStats,
    pub shape: ProgramShape,
}

impl AllocationResult {
    /// Total allocation per node (p.u.).
    pub fn nodal_allocation_pu(&self) -> Vec<f64> {
        let n = self.bid_mw.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for row in &self.allocation_pu {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)]
pub enum MarketOutcome {
    AcceptedAll { feasibility: FeasibilityResult },
    Cleared { feasibility: FeasibilityResult, allocation: AllocationResult },
}

impl MarketOutcome {
    pub fn feasibility(&self) -> &FeasibilityResult {
        match self {
            MarketOutcome::AcceptedAll { feasibility } | MarketOutcome::Cleared { feasibility, .. } => feasibility,
        }
    }

    pub fn allocation(&self) -> Option<&AllocationResult> {
        match self {
            MarketOutcome::Cleared { allocation, .. } => Some(allocation),
            MarketOutcome::AcceptedAll { .. } => None,
        }
    }

    /// Dispatch box the outcome grants, widened by the worst-case demand
    /// deviation when the run was robust.
    pub fn audit_box(&self, scn: &MarketScenario) -> AuditBox {
        let nodal = match self {
            MarketOutcome::AcceptedAll { .. } => scn.total_offer(),
            MarketOutcome::Cleared { allocation, .. } => allocation.nodal_allocation_pu(),
        };
        AuditBox::from_allocation(scn.direction, &nodal, deviation(scn))
    }
}

fn deviation(scn: &MarketScenario) -> Option<&[f64]> {
    if !scn.robust {
        return None;
    }
    Some(match scn.direction {
        Direction::Upper => &scn.demand.d_plus,
        Direction::Lower => &scn.demand.d_minus,
    })
}

/// CIA system for a box whose far end moves by `flex` (nonnegative magnitude)
/// in the scenario's direction, plus network limits.
fn certified_program(
    prog: &mut ConvexProgram,
    scn: &MarketScenario,
    ctx: &MarketContext,
    flex: Vec<LinExpr>,
) -> Result<(), MarketError> {
    let load = &scn.demand.p_load;
    let dev = deviation(scn);
    let far: Vec<LinExpr> = flex
        .into_iter()
        .enumerate()
        .map(|(k, f)| {
            let d = dev.map_or(0.0, |d| d[k]);
            match scn.direction {
                Direction::Upper => f.plus(d - load[k]),
                Direction::Lower => f.scaled(-1.0).plus(-d - load[k]),
            }
        })
        .collect();
    let base: Vec<LinExpr> = load.iter().map(|l| LinExpr::constant(-l)).collect();
    let (p_upper, p_lower) = match scn.direction {
        Direction::Upper => (far, base),
        Direction::Lower => (base, far),
    };
    let inj = InjectionBox { p_upper, p_lower, q: scn.demand.q_load.iter().map(|l| -l).collect() };
    let h = build_cia_constraints(prog, &ctx.matrices, scn.feeder.v0, &ctx.op, &inj, &CiaOptions::default())?;
    add_network_limits(prog, &scn.feeder, &h)?;
    Ok(())
}

fn require_offers(scn: &MarketScenario) -> Result<(), MarketError> {
    if scn.has_offers() {
        Ok(())
    } else {
        Err(InputError::invalid(format!("no aggregator offers {} flexibility", scn.direction)).into())
    }
}

fn solver_error(problem: &str, status: SolveStatus, stats: &SolveStats) -> MarketError {
    MarketError::Solver {
        problem: problem.into(),
        status: format!("{status} (backend {}, max violation {:?})", stats.backend_status, stats.max_violation),
    }
}

/// Step 1 program: `min sum s` with the offer reduced by `s` certified.
pub struct Step1Program {
    pub program: ConvexProgram,
    pub slack: VarBlock,
}

/// Step 2 program: one allocation variable per positive offer
/// (`vars[aggregator][node - 1]`).
pub struct Step2Program {
    pub program: ConvexProgram,
    pub vars: Vec<Vec<Option<Var>>>,
}

pub fn step1_program(scn: &MarketScenario, ctx: &MarketContext) -> Result<Step1Program, MarketError> {
    require_offers(scn)?;
    let n = scn.feeder.node_count;
    let offer = scn.total_offer();
    let dev = deviation(scn);
    let upper: Vec<f64> = (0..n).map(|k| offer[k] + dev.map_or(0.0, |d| d[k])).collect();

    let mut prog = ConvexProgram::new();
    let s = prog.add_variable_bounded("s", &vec![0.0; n], &upper)?;
    let flex: Vec<LinExpr> = (0..n).map(|k| LinExpr::constant(offer[k]).term(s.at(k), -1.0)).collect();
    certified_program(&mut prog, scn, ctx, flex)?;
    let mut obj = LinExpr::default();
    for v in s.iter() {
        obj.add_term(v, 1.0);
    }
    prog.set_objective(Sense::Minimize, obj)?;
    Ok(Step1Program { program: prog, slack: s })
}

/// Step 1: minimum total slack that makes the full offer admissible.
pub fn step1_feasibility(scn: &MarketScenario, ctx: &MarketContext) -> Result<FeasibilityResult, MarketError> {
    let Step1Program { program: prog, slack: s } = step1_program(scn, ctx)?;
    let sol = prog.solve()?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(MarketError::BackgroundInfeasible(format!(
                "step 1 infeasible even with full slack ({} direction)",
                scn.direction
            )))
        }
        other => return Err(solver_error("step 1", other, &sol.stats)),
    }
    let pu = scn.feeder.per_unit();
    let slack_pu: Vec<f64> = sol.block(&s).into_iter().map(|x| x.max(0.0)).collect();
    let slack_mw: Vec<f64> = slack_pu.iter().map(|&x| pu.pu_to_mw(x)).collect();
    let max_slack_mw = slack_mw.iter().cloned().fold(0.0, f64::max);
    let epsilon_mw = scn.epsilon_watts * 1e-6;
    Ok(FeasibilityResult {
        direction: scn.direction,
        robust: scn.robust,
        slack_pu,
        slack_mw,
        max_slack_mw,
        epsilon_mw,
        feasible: max_slack_mw <= epsilon_mw,
        stats: sol.stats,
        shape: prog.shape(),
    })
}

pub fn step2_program(scn: &MarketScenario, ctx: &MarketContext) -> Result<Step2Program, MarketError> {
    require_offers(scn)?;
    let n = scn.feeder.node_count;
    let mut prog = ConvexProgram::new();

    let mut vars: Vec<Vec<Option<Var>>> = vec![vec![None; n]; scn.bids.len()];
    let mut flex: Vec<LinExpr> = vec![LinExpr::default(); n];
    let mut obj = LinExpr::default();
    for (m, bid) in scn.bids.iter().enumerate() {
        let Some(cap) = bid.capacity(scn.direction) else { continue };
        for k in 0..n {
            if cap[k] > 0.0 {
                let v = prog.add_variable(&format!("p_{}_{}", bid.id, k + 1), 1, 0.0, cap[k]).at(0);
                vars[m][k] = Some(v);
                flex[k].add_term(v, 1.0);
                obj.add_term(v, bid.price[k]);
            }
        }
    }
    certified_program(&mut prog, scn, ctx, flex)?;
    prog.set_objective(Sense::Maximize, obj)?;
    Ok(Step2Program { program: prog, vars })
}

/// Step 2: maximise `sum k p` over `0 <= p <= p_bid` subject to the CIA.
pub fn step2_allocate(
    scn: &MarketScenario,
    ctx: &MarketContext,
    cfg: &MarketConfig,
) -> Result<AllocationResult, MarketError> {
    let Step2Program { program: prog, vars } = step2_program(scn, ctx)?;
    let n = scn.feeder.node_count;
    let nbids = scn.bids.len();
    let sol = prog.solve()?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(MarketError::BackgroundInfeasible(format!(
                "step 2 infeasible at zero allocation ({} direction)",
                scn.direction
            )))
        }
        other => return Err(solver_error("step 2", other, &sol.stats)),
    }

    let pu = scn.feeder.per_unit();
    let mut allocation_pu = vec![vec![0.0; n]; nbids];
    let mut bid_mw = vec![vec![0.0; n]; nbids];
    for (m, bid) in scn.bids.iter().enumerate() {
        let cap = bid.capacity(scn.direction);
        for k in 0..n {
            let c = cap.map_or(0.0, |c| c[k]);
            bid_mw[m][k] = pu.pu_to_mw(c);
            if let Some(v) = vars[m][k] {
                allocation_pu[m][k] = sol.value(v).clamp(0.0, c);
            }
        }
    }
    let allocation_mw: Vec<Vec<f64>> =
        allocation_pu.iter().map(|row| row.iter().map(|&a| pu.pu_to_mw(a)).collect()).collect();
    let price: Vec<Vec<f64>> = scn.bids.iter().map(|b| b.price.clone()).collect();
    let clearing_price = clearing_prices_with(&allocation_mw, &bid_mw, &price, cfg.pricing, cfg.price_threshold_mw);
    let revenue = dno_revenue(&allocation_mw, &clearing_price);

    let nodal_fraction = (0..n)
        .map(|k| {
            let b: f64 = bid_mw.iter().map(|r| r[k]).sum();
            let a: f64 = allocation_mw.iter().map(|r| r[k]).sum();
            (b > 0.0).then(|| a / b)
        })
        .collect();
    let aggregator_fraction = (0..nbids)
        .map(|m| {
            let b: f64 = bid_mw[m].iter().sum();
            let a: f64 = allocation_mw[m].iter().sum();
            (b > 0.0).then(|| a / b)
        })
        .collect();
    let total_allocation_mw = allocation_mw.iter().flatten().sum();
    let tie_nodes = tie_nodes(&allocation_mw, &bid_mw, &price, cfg.price_threshold_mw);

    Ok(AllocationResult {
        direction: scn.direction,
        robust: scn.robust,
        pricing_rule: cfg.pricing,
        aggregators: scn.bids.iter().map(|b| b.id.clone()).collect(),
        allocation_mw,
        allocation_pu,
        bid_mw,
        price,
        clearing_price,
        revenue,
        nodal_fraction,
        aggregator_fraction,
        total_allocation_mw,
        objective: sol.objective.unwrap_or(0.0) * scn.feeder.base_mva,
        tie_nodes,
        stats: sol.stats,
        shape: prog.shape(),
    })
}

/// Lowest price among aggregators allocated more than the threshold at each node.
pub fn clearing_prices(allocation_mw: &[Vec<f64>], price: &[Vec<f64>]) -> Vec<Option<f64>> {
    let bid_mw: Vec<Vec<f64>> = allocation_mw.to_vec();
    clearing_prices_with(allocation_mw, &bid_mw, price, PricingRule::LowestAccepted, PRICE_THRESHOLD_MW)
}

/// Clearing price per node under `rule`. Indexing is `[aggregator][node - 1]`.
pub fn clearing_prices_with(
    allocation_mw: &[Vec<f64>],
    bid_mw: &[Vec<f64>],
    price: &[Vec<f64>],
    rule: PricingRule,
    threshold_mw: f64,
) -> Vec<Option<f64>> {
    let n = allocation_mw.first().map_or(0, Vec::len);
    (0..n)
        .map(|k| {
            let lowest_accepted = allocation_mw
                .iter()
                .zip(price)
                .filter(|(a, _)| a[k] > threshold_mw)
                .map(|(_, p)| p[k])
                .reduce(f64::min)?;
            match rule {
                PricingRule::LowestAccepted => Some(lowest_accepted),
                PricingRule::HighestRejected => Some(
                    allocation_mw
                        .iter()
                        .zip(bid_mw)
                        .zip(price)
                        .filter(|((a, b), _)| b[k] - a[k] > threshold_mw)
                        .map(|(_, p)| p[k])
                        .reduce(f64::max)
                        .unwrap_or(lowest_accepted),
                ),
            }
        })
        .collect()
}

/// `sum_i sum_m k_c,i p_m,i` in dollars; nodes without a price contribute 0.
pub fn dno_revenue(allocation_mw: &[Vec<f64>], clearing: &[Option<f64>]) -> f64 {
    let mut total = 0.0;
    for (k, kc) in clearing.iter().enumerate() {
        if let Some(kc) = kc {
            for row in allocation_mw {
                total += kc * row[k];
            }
        }
    }
    total
}

/// Nodes where two offers share a price and at least one of them is only
/// partly filled, so the solver's split between them is arbitrary.
fn tie_nodes(allocation_mw: &[Vec<f64>], bid_mw: &[Vec<f64>], price: &[Vec<f64>], thr: f64) -> Vec<usize> {
    let n = bid_mw.first().map_or(0, Vec::len);
    let m = bid_mw.len();
    let mut out = Vec::new();
    for k in 0..n {
        let tied = (0..m).any(|a| {
            (a + 1..m).any(|b| {
                bid_mw[a][k] > thr
                    && bid_mw[b][k] > thr
                    && (price[a][k] - price[b][k]).abs() <= 1e-9 * price[a][k].abs().max(1.0)
                    && (bid_mw[a][k] - allocation_mw[a][k] > thr || bid_mw[b][k] - allocation_mw[b][k] > thr)
            })
        });
        if tied {
            out.push(k + 1);
        }
    }
    out
}

/// Full two-step run: accept everything when step 1 needs no slack,
/// otherwise clear with step 2.
pub fn run_market(scn: &MarketScenario, cfg: &MarketConfig) -> Result<MarketOutcome, MarketError> {
    let ctx = MarketContext::new(scn)?;
    let feasibility = step1_feasibility(scn, &ctx)?;
    if feasibility.feasible {
        return Ok(MarketOutcome::AcceptedAll { feasibility });
    }
    let allocation = step2_allocate(scn, &ctx, cfg)?;
    Ok(MarketOutcome::Cleared { feasibility, allocation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_five_price() {
        // four aggregators all allocated at one node
        let alloc = vec![vec![0.2], vec![0.1], vec![0.3], vec![0.05]];
        let price = vec![vec![12.9], vec![3.60], vec![21.0], vec![1.3]];
        assert_eq!(clearing_prices(&alloc, &price), vec![Some(1.3)]);
    }

    #[test]
    fn single_and_empty_nodes() {
        let alloc = vec![vec![0.4, 0.0]];
        let price = vec![vec![7.5, 3.0]];
        assert_eq!(clearing_prices(&alloc, &price), vec![Some(7.5), None]);
        // solver-level zero does not set the price
        let alloc = vec![vec![1.0], vec![1e-9]];
        let price = vec![vec![5.0], vec![1.0]];
        assert_eq!(clearing_prices(&alloc, &price), vec![Some(5.0)]);
    }

    #[test]
    fn revenue_examples() {
        let alloc = vec![vec![2.0], vec![1.0]];
        assert_eq!(dno_revenue(&alloc, &[Some(5.0)]), 15.0);
        assert_eq!(dno_revenue(&[vec![0.0, 0.0]], &[None, None]), 0.0);
    }

    #[test]
    fn highest_rejected_rule() {
        let alloc = vec![vec![1.0], vec![0.5], vec![0.0]];
        let bids = vec![vec![1.0], vec![1.0], vec![1.0]];
        let price = vec![vec![10.0], vec![6.0], vec![4.0]];
        let kc = clearing_prices_with(&alloc, &bids, &price, PricingRule::HighestRejected, PRICE_THRESHOLD_MW);
        assert_eq!(kc, vec![Some(6.0)]);
        let kc = clearing_prices_with(&alloc, &bids, &price, PricingRule::LowestAccepted, PRICE_THRESHOLD_MW);
        assert_eq!(kc, vec![Some(6.0)]);
        let full = vec![vec![1.0], vec![1.0], vec![1.0]];
        let kc = clearing_prices_with(&full, &bids, &price, PricingRule::HighestRejected, PRICE_THRESHOLD_MW);
        assert_eq!(kc, vec![Some(4.0)]);
    }

    #[test]
    fn ties_flagged() {
        let alloc = vec![vec![0.5, 1.0], vec![0.5, 1.0]];
        let bids = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let price = vec![vec![3.0, 3.0], vec![3.0, 3.0]];
        assert_eq!(tie_nodes(&alloc, &bids, &price, 1e-6), vec![1]);
    }

    #[test]
    fn pricing_rule_names() {
        assert_eq!("highest-rejected".parse::<PricingRule>().unwrap(), PricingRule::HighestRejected);
        assert!("median".parse::<PricingRule>().is_err());
    }
}
