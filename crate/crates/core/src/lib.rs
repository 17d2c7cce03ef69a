//! Day-ahead flexibility market for radial distribution feeders.
//!
//! The DNO checks whether aggregator bids can all be accepted, allocates
//! flexibility when they cannot and prices it per node. Network admissibility
//! is guaranteed with a convex inner approximation of the branch-flow model
//! built around the background operating point.

pub mod audit;
pub mod cia;
pub mod distflow;
pub mod error;
pub mod exec;
pub mod hosting;
pub mod io;
pub mod market;
pub mod matrices;
pub mod model;
pub mod program;
pub mod scenarios;
pub mod topology;

pub use error::{InputError, MarketError, PowerFlowError, ProgramError};
pub use model::{AggregatorBid, DemandProfile, Direction, FeederModel, MarketScenario};
