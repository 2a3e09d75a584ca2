//! RPC name resolution through composable lookup functions.
//!
//! A client call names *what* it wants to talk to (a lease, a key, a host
//! alias) and a resolver chain turns that into a target plus a timeout guess.
//! The call loop in [`rpc`] retries against fresh resolutions, so callers
//! never hand-write lookup-and-retry loops around a lockservice.
//!
//! Modules, bottom-up:
//! - [`sim`]: deterministic event kernel, simulated network and traces
//! - [`lockservice`]: in-process lease directory with fencing epochs
//! - [`resolver`]: lease, static and tablet stages, chaining, caching
//! - [`rpc`]: wire codec, fenced server dispatch and the client call loop
//! - [`tabletkv`]: range-partitioned tablets named by lease
//! - [`harness`]: scenario files, the simulated deployment, metrics and checks

pub mod harness;
pub mod lockservice;
pub mod resolver;
pub mod rpc;
pub mod sim;
pub mod tabletkv;
