use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridmarket::market::PricingRule;
use gridmarket::Direction;

#[derive(Debug, Parser)]
#[command(name = "gridmarket", version, about = "Grid-aware flexibility market for radial feeders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate inputs; prints a JSON report.
    Validate(InputArgs),
    /// Step 1 only: minimum slack needed to accept every bid.
    Step1(RunArgs),
    /// Step 2 only: price-weighted allocation, clearing prices and revenue.
    Clear(RunArgs),
    /// Full market run followed by the admissibility audit.
    Run(RunArgs),
    /// Hosting-capacity sweep over LinDist, SOCP, CIA and the exact power flow.
    Compare(CompareArgs),
    /// Write a built-in scenario as feeder and bids files.
    Scenario(ScenarioArgs),
    /// Write network matrices, Taylor data and both market programs for debugging.
    Dump(DumpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Feeder file (.json or .csv); may embed the background demand.
    #[arg(long, required_unless_present = "scenario")]
    pub feeder: Option<PathBuf>,
    /// Aggregator bids (.json or .csv).
    #[arg(long, conflicts_with = "scenario")]
    pub bids: Option<PathBuf>,
    /// Demand override (.json or .csv); replaces the feeder's embedded demand.
    #[arg(long, conflicts_with = "scenario")]
    pub demand: Option<PathBuf>,
    /// Built-in scenario instead of files.
    #[arg(long, conflicts_with = "feeder")]
    pub scenario: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    /// JSON reports plus prices.csv.
    Json,
    /// Everything `json` writes plus allocation.csv and slack.csv.
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "upper")]
    pub direction: Direction,
    /// Reserve the worst-case demand deviation.
    #[arg(long)]
    pub robust: bool,
    #[arg(long, default_value_t = 10.0)]
    pub epsilon_watts: f64,
    #[arg(long, default_value_t = 200)]
    pub audit_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    /// `lowest-accepted` or `highest-rejected`.
    #[arg(long, default_value = "lowest-accepted")]
    pub pricing: PricingRule,
    /// Run the audit on the calling thread only.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Nodes (1-based) that receive the injection; defaults to the nodes with
    /// bids, or every node when no bids are given.
    #[arg(long, value_delimiter = ',')]
    pub nodes: Vec<usize>,
    /// P_max sweep in MW as START:STOP:STEP.
    #[arg(long, default_value = "0:2:0.1")]
    pub grid: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    pub name: String,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "upper")]
    pub direction: Direction,
    #[arg(long)]
    pub robust: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}
