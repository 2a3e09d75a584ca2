//! Scenario files, the simulated deployment, both client flows, metrics and
//! trace checks.
//!
//! The naive flow resolves a tablet, asks the lockservice once, sends once and
//! never looks at the reply. The library flow sends the same operations through
//! [`crate::rpc::call`] with the chain `tablet -> cached(lease) -> static`.
//! Shipped scenarios are constructed workloads; nothing about their timing
//! comes from a measured system.

mod check;
mod run;
mod scenario;
mod shipped;
mod world;

pub use check::{check_trace, lost_puts, Violation};
pub use run::{metrics_line, run_scenario, total_line, OpKind, OpRecord, RunMetrics, Simulation};
pub use scenario::{ClientMode, Scenario, ScenarioError, Workload, CLIENT, DEFAULT_LEASE_TTL};
pub use shipped::{demo_split, shipped, CACHE_SCN, DEMO_SPLIT_SCN, FAILOVER_SCN, SPLIT_SCN};
pub use world::{Event, Packet, World, ADMIN, LOCKSERVICE};
