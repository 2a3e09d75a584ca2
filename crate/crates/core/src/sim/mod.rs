//! Deterministic discrete-event simulation substrate.
//!
//! A [`Kernel`] owns the logical clock, the event queue and the [`Trace`].
//! [`SimNetwork`] models links between named entities; faults are scheduled
//! through [`Kernel::inject_fault`] and applied by whoever handles events.

mod fault;
mod kernel;
mod network;
mod rng;
mod time;
mod trace;

pub use fault::{FaultKind, FaultSpec};
pub use kernel::{EventId, Kernel};
pub use network::{Envelope, SimNetwork, DEFAULT_LATENCY};
pub use rng::SeedStreams;
pub use time::{Clock, ManualClock, SimClock, SimDuration, SimTime, WallClock};
pub use trace::{detail_field, fnv1a64, trace_hash, Trace, TraceEntry, TraceEvent, FNV_OFFSET_BASIS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("scenario error: {0}")]
    Scenario(String),
}
