//! Integrated satellite / HAP / tethered-balloon / terrestrial network simulator.
//!
//! The crate computes end-to-end user throughput for a layered wireless network in
//! which ground users reach ground base stations (GBSs), tethered balloons (TBs),
//! high-altitude platforms (HAPs) or a satellite over RF access links, and the
//! serving stations reach the core network over hybrid FSO/RF back-haul.
//!
//! Module map:
//!
//! - [`scenario`]: entities, configuration, seeded scenario construction and validation.
//! - [`channel`]: RF and FSO link budgets, Shannon rates, FSO alignment, medium selection.
//! - [`association`]: access and back-haul association solvers.
//! - [`allocation`]: bandwidth / power allocation, back-haul bottlenecks, utilities.
//! - [`placement`]: shrink-and-re-align local search for HAP and TB positions.
//! - [`energy`]: tethered-balloon battery tracking and sleep scheduling.
//! - [`harness`]: end-to-end experiment pipeline, sweeps, CSV and SVG output.

pub mod allocation;
pub mod association;
pub mod channel;
pub mod energy;
pub mod harness;
pub mod placement;
pub mod scenario;
pub mod units;

use thiserror::Error;

pub use allocation::{AllocationParams, AllocationResult, UtilityMetric};
pub use association::{AccessAssociation, BackhaulAssociation, Direction};
pub use channel::{ChannelParams, LinkBudget, Medium};
pub use scenario::{Mode, NodeKind, Position, Scenario, ScenarioConfig};

/// Crate-wide error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] scenario::ConfigError),
    #[error(transparent)]
    Channel(#[from] channel::ChannelError),
    #[error(transparent)]
    Association(#[from] association::AssociationError),
    #[error(transparent)]
    Allocation(#[from] allocation::AllocationError),
    #[error(transparent)]
    Placement(#[from] placement::PlacementError),
    #[error(transparent)]
    Energy(#[from] energy::EnergyError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
