//! Command-line front end: validation, the two market steps, the full run with
//! its admissibility audit, hosting-capacity comparisons and debug dumps.
//!
//! Exit codes: 0 success, 1 input error, 2 solver failure, 3 audit violation.

pub mod args;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::Parser;
use gridmarket::audit::{sample_box_admissibility, AuditConfig, AuditReport};
use gridmarket::cia::compute_operating_point;
use gridmarket::exec::ExecMode;
use gridmarket::hosting::compare_sweep;
use gridmarket::io::{load_bids, load_demand, load_feeder_with_demand, BidsFile, FeederFile, FileFormat};
use gridmarket::market::{
    run_market, step1_feasibility, step1_program, step2_allocate, step2_program, AllocationResult, FeasibilityResult,
    MarketConfig, MarketContext, MarketOutcome,
};
use gridmarket::matrices::{matrix_csv, NetworkMatrices};
use gridmarket::scenarios::{named_scenario, SCENARIO_NAMES};
use gridmarket::{DemandProfile, FeederModel, InputError, MarketError, MarketScenario};
use serde::Serialize;

use crate::args::{Cli, Command, CompareArgs, DumpArgs, InputArgs, ReportFormat, RunArgs, ScenarioArgs};
use crate::output::{num, opt, to_json, write, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;

/// A failure tagged with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_INPUT, error: error.into() }
    }
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        Failure::input(e)
    }
}

impl From<MarketError> for Failure {
    fn from(e: MarketError) -> Self {
        let code = match e {
            MarketError::Input(_) => EXIT_INPUT,
            _ => EXIT_SOLVER,
        };
        Failure { code, error: e.into() }
    }
}

// Writing reports is the only other fallible step; treat it like bad input.
impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::input(e)
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{}", e.render()) } else { write!(out, "{}", e.render()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {:#}", f.error);
            f.code
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Validate(a) => cmd_validate(&a, out),
        Command::Step1(a) => cmd_step1(&a, out),
        Command::Clear(a) => cmd_clear(&a, out),
        Command::Run(a) => cmd_run(&a, out),
        Command::Compare(a) => cmd_compare(&a, out),
        Command::Scenario(a) => cmd_scenario(&a, out),
        Command::Dump(a) => cmd_dump(&a, out),
    }
}

struct Inputs {
    feeder: FeederModel,
    demand: DemandProfile,
    bids: Option<Vec<gridmarket::AggregatorBid>>,
    robust: bool,
}

fn load_inputs(a: &InputArgs) -> Result<Inputs, Failure> {
    if let Some(name) = &a.scenario {
        let scn = named_scenario(name).ok_or_else(|| {
            Failure::input(anyhow!("unknown scenario {name:?}; expected one of {}", SCENARIO_NAMES.join(", ")))
        })?;
        return Ok(Inputs { feeder: scn.feeder, demand: scn.demand, bids: Some(scn.bids), robust: scn.robust });
    }
    let path = a.feeder.as_deref().ok_or_else(|| Failure::input(anyhow!("--feeder is required")))?;
    let (feeder, mut demand) = load_feeder_with_demand(path, FileFormat::from_path(path))?;
    if let Some(d) = &a.demand {
        demand = load_demand(d, &feeder)?;
    }
    let bids = match &a.bids {
        Some(b) => Some(load_bids(b, FileFormat::from_path(b), &feeder)?),
        None => None,
    };
    Ok(Inputs { feeder, demand, bids, robust: false })
}

fn scenario(a: &RunArgs) -> Result<MarketScenario, Failure> {
    let inp = load_inputs(&a.input)?;
    let bids = inp.bids.ok_or_else(|| Failure::input(anyhow!("--bids is required")))?;
    let scn = MarketScenario::new(inp.feeder, inp.demand, bids)?
        .with_direction(a.direction)
        .with_robust(a.robust || inp.robust)
        .with_epsilon_watts(a.epsilon_watts);
    scn.validate()?;
    Ok(scn)
}

fn market_config(a: &RunArgs) -> MarketConfig {
    MarketConfig { pricing: a.pricing, ..MarketConfig::default() }
}

#[derive(Serialize)]
struct ValidationReport {
    valid: bool,
    nodes: Option<usize>,
    aggregators: Option<usize>,
    errors: Vec<String>,
}

fn cmd_validate(a: &InputArgs, out: &mut dyn Write) -> CmdResult {
    let report = match load_inputs(a) {
        Ok(inp) => {
            let mut errors = Vec::new();
            if let Some(bids) = &inp.bids {
                if let Err(e) = MarketScenario::new(inp.feeder.clone(), inp.demand.clone(), bids.clone()) {
                    errors.push(e.to_string());
                }
            }
            if errors.is_empty() {
                if let Err(e) = compute_operating_point(&inp.feeder, &inp.demand) {
                    errors.push(format!("background power flow: {e}"));
                }
            }
            ValidationReport {
                valid: errors.is_empty(),
                nodes: Some(inp.feeder.node_count),
                aggregators: inp.bids.as_ref().map(Vec::len),
                errors,
            }
        }
        Err(f) => {
            ValidationReport { valid: false, nodes: None, aggregators: None, errors: vec![format!("{:#}", f.error)] }
        }
    };
    write!(out, "{}", to_json(&report)?).context("writing report")?;
    Ok(if report.valid { EXIT_OK } else { EXIT_INPUT })
}

fn label(feeder: &FeederModel, node: usize) -> String {
    feeder.labels.get(node).cloned().unwrap_or_else(|| node.to_string())
}

fn feasibility_summary(f: &FeasibilityResult) -> String {
    if f.feasible {
        format!("ACCEPTED ALL (max slack {:.3} MW ≤ ε)", f.max_slack_mw)
    } else {
        format!("STEP 2 REQUIRED (max slack {:.3} MW > ε = {:.6} MW)", f.max_slack_mw, f.epsilon_mw)
    }
}

fn write_feasibility(
    scn: &MarketScenario,
    f: &FeasibilityResult,
    dir: &Path,
    format: ReportFormat,
) -> anyhow::Result<()> {
    write(dir, "feasibility.json", &to_json(f)?)?;
    if format == ReportFormat::Csv {
        let mut t = Table::new(&["node", "label", "slack_mw"]);
        for (k, s) in f.slack_mw.iter().enumerate() {
            t.row([(k + 1).to_string(), label(&scn.feeder, k + 1), num(*s)]);
        }
        write(dir, "slack.csv", &t.into_string())?;
    }
    Ok(())
}

fn write_allocation(
    scn: &MarketScenario,
    a: &AllocationResult,
    dir: &Path,
    format: ReportFormat,
) -> anyhow::Result<()> {
    write(dir, "allocation.json", &to_json(a)?)?;
    let n = scn.feeder.node_count;
    let mut t = Table::new(&["node", "label", "clearing_price_per_mw", "allocation_mw", "bid_mw", "nodal_fraction"]);
    for k in 0..n {
        let bid: f64 = a.bid_mw.iter().map(|r| r[k]).sum();
        if bid <= 0.0 {
            continue;
        }
        let alloc: f64 = a.allocation_mw.iter().map(|r| r[k]).sum();
        t.row([
            (k + 1).to_string(),
            label(&scn.feeder, k + 1),
            opt(a.clearing_price[k]),
            num(alloc),
            num(bid),
            opt(a.nodal_fraction[k]),
        ]);
    }
    write(dir, "prices.csv", &t.into_string())?;
    if format == ReportFormat::Csv {
        let mut t = Table::new(&["aggregator", "node", "label", "bid_mw", "allocation_mw", "price_per_mw"]);
        for (m, id) in a.aggregators.iter().enumerate() {
            for k in 0..n {
                if a.bid_mw[m][k] > 0.0 {
                    t.row([
                        id.clone(),
                        (k + 1).to_string(),
                        label(&scn.feeder, k + 1),
                        num(a.bid_mw[m][k]),
                        num(a.allocation_mw[m][k]),
                        num(a.price[m][k]),
                    ]);
                }
            }
        }
        write(dir, "allocation.csv", &t.into_string())?;
    }
    Ok(())
}

fn allocation_summary(a: &AllocationResult) -> String {
    let offered: f64 = a.bid_mw.iter().flatten().sum();
    let mut levels: Vec<f64> = a.clearing_price.iter().flatten().cloned().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    format!(
        "CLEARED {:.3} of {:.3} MW offered; revenue ${:.2}; {} clearing price level(s)",
        a.total_allocation_mw,
        offered,
        a.revenue,
        levels.len()
    )
}

fn cmd_step1(a: &RunArgs, out: &mut dyn Write) -> CmdResult {
    let scn = scenario(a)?;
    let ctx = MarketContext::new(&scn)?;
    let f = step1_feasibility(&scn, &ctx)?;
    write_feasibility(&scn, &f, &a.out, a.format)?;
    writeln!(out, "{}", feasibility_summary(&f)).context("writing summary")?;
    Ok(EXIT_OK)
}

fn cmd_clear(a: &RunArgs, out: &mut dyn Write) -> CmdResult {
    let scn = scenario(a)?;
    let ctx = MarketContext::new(&scn)?;
    let alloc = step2_allocate(&scn, &ctx, &market_config(a))?;
    write_allocation(&scn, &alloc, &a.out, a.format)?;
    writeln!(out, "{}", allocation_summary(&alloc)).context("writing summary")?;
    Ok(EXIT_OK)
}

fn audit_summary(r: &AuditReport) -> String {
    if r.is_clean() {
        format!(
            "AUDIT CLEAN ({} corners + {} samples, worst violation {:.3e})",
            r.corners, r.samples, r.worst_violation
        )
    } else {
        format!(
            "AUDIT VIOLATION ({} of {} points, {} not converged, worst violation {:.3e})",
            r.violating_points,
            r.corners + r.samples,
            r.nonconverged_points,
            r.worst_violation
        )
    }
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> CmdResult {
    let scn = scenario(a)?;
    let start = Instant::now();
    let outcome = run_market(&scn, &market_config(a))?;
    write_feasibility(&scn, outcome.feasibility(), &a.out, a.format)?;
    writeln!(out, "{}", feasibility_summary(outcome.feasibility())).context("writing summary")?;
    if let MarketOutcome::Cleared { allocation, .. } = &outcome {
        write_allocation(&scn, allocation, &a.out, a.format)?;
        writeln!(out, "{}", allocation_summary(allocation)).context("writing summary")?;
    }
    let mut code = EXIT_OK;
    if a.audit_samples > 0 {
        let cfg = AuditConfig {
            samples: a.audit_samples,
            seed: a.seed,
            mode: if a.sequential { ExecMode::Sequential } else { ExecMode::default() },
            ..AuditConfig::default()
        };
        let report = sample_box_admissibility(&scn.feeder, &scn.demand, &outcome.audit_box(&scn), &cfg);
        write(&a.out, "audit.json", &to_json(&report)?)?;
        writeln!(out, "{}", audit_summary(&report)).context("writing summary")?;
        if !report.is_clean() {
            code = EXIT_AUDIT;
        }
    }
    writeln!(out, "done in {:.3} s; reports in {}", start.elapsed().as_secs_f64(), a.out.display())
        .context("writing summary")?;
    Ok(code)
}

fn parse_grid(s: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::input(anyhow!("--grid expects START:STOP:STEP with STEP > 0, got {s:?}"));
    let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [start, stop, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| start + i as f64 * step).collect())
}

fn cmd_compare(a: &CompareArgs, out: &mut dyn Write) -> CmdResult {
    let inp = load_inputs(&a.input)?;
    let grid = parse_grid(&a.grid)?;
    let n = inp.feeder.node_count;
    let nodes: Vec<usize> = if !a.nodes.is_empty() {
        a.nodes.clone()
    } else if let Some(bids) = &inp.bids {
        (1..=n).filter(|&k| bids.iter().any(|b| b.p_bid[k - 1] > 0.0)).collect()
    } else {
        (1..=n).collect()
    };
    if let Some(&bad) = nodes.iter().find(|&&k| k == 0 || k > n) {
        return Err(Failure::input(anyhow!("node {bad} is not in the feeder (1..={n})")));
    }
    let rows = compare_sweep(&inp.feeder, &inp.demand, &nodes, &grid);
    let mut t = Table::new(&[
        "p_max_mw",
        "method",
        "status",
        "claimed_injection_mw",
        "max_voltage_pu2",
        "v_max_limit_pu2",
        "admissible",
    ]);
    let v_limit = inp.feeder.v_max.iter().cloned().fold(f64::INFINITY, f64::min);
    for r in &rows {
        t.row([
            num(r.p_max_mw),
            r.method.clone(),
            r.status.clone(),
            opt(r.claimed_injection_mw),
            opt(r.max_voltage_pu2),
            num(v_limit),
            r.admissible.map(|b| b.to_string()).unwrap_or_default(),
        ]);
    }
    write(&a.out, "compare.csv", &t.into_string())?;
    writeln!(out, "{} rows written to {}", rows.len(), a.out.join("compare.csv").display())
        .context("writing summary")?;
    Ok(EXIT_OK)
}

fn cmd_scenario(a: &ScenarioArgs, out: &mut dyn Write) -> CmdResult {
    let scn = named_scenario(&a.name).ok_or_else(|| {
        Failure::input(anyhow!("unknown scenario {:?}; expected one of {}", a.name, SCENARIO_NAMES.join(", ")))
    })?;
    let feeder = FeederFile::from_model(&scn.feeder, &scn.demand);
    let bids = BidsFile::from_bids(&scn.bids, &scn.feeder);
    write(&a.out, "feeder.json", &to_json(&feeder)?)?;
    write(&a.out, "bids.json", &to_json(&bids)?)?;
    writeln!(out, "wrote {}/feeder.json and bids.json", a.out.display()).context("writing summary")?;
    Ok(EXIT_OK)
}

fn cmd_dump(a: &DumpArgs, out: &mut dyn Write) -> CmdResult {
    let inp = load_inputs(&a.input)?;
    let m = NetworkMatrices::build(&inp.feeder, inp.feeder.order());
    for (name, mat) in m.named() {
        write(&a.out, &format!("{name}.csv"), &matrix_csv(mat))?;
    }
    let op = compute_operating_point(&inp.feeder, &inp.demand).map_err(MarketError::from)?;
    write(&a.out, "taylor.csv", &op.taylor_csv(&inp.feeder))?;
    if let Some(bids) = inp.bids {
        let scn = MarketScenario::new(inp.feeder, inp.demand, bids)?
            .with_direction(a.direction)
            .with_robust(a.robust || inp.robust);
        let ctx = MarketContext::new(&scn)?;
        write(&a.out, "step1.lp", &step1_program(&scn, &ctx)?.program.to_lp_string())?;
        write(&a.out, "step2.lp", &step2_program(&scn, &ctx)?.program.to_lp_string())?;
    }
    writeln!(out, "debug files written to {}", a.out.display()).context("writing summary")?;
    Ok(EXIT_OK)
}
