//! Workload execution for both client flows, plus metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::resolver::{Cached, Chain, LeaseResolver, StaticResolver, TabletStage};
use crate::rpc::{call_observed, CallObserver, CallPolicy, Request, RetryReason, Status, Transport};
use crate::sim::{trace_hash, SeedStreams, SimDuration, Trace, TraceEvent};
use crate::tabletkv::{GET, PUT};

use super::check::lost_puts;
use super::scenario::{ClientMode, Scenario, CLIENT};
use super::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunMetrics {
    pub ops_issued: u64,
    pub ops_acked: u64,
    pub ops_lost: u64,
    pub attempts_total: u64,
    pub lockservice_lookups: u64,
    pub cache_hits: u64,
    pub wall_events: u64,
}

impl RunMetrics {
    pub fn add(&mut self, other: &RunMetrics) {
        self.ops_issued += other.ops_issued;
        self.ops_acked += other.ops_acked;
        self.ops_lost += other.ops_lost;
        self.attempts_total += other.attempts_total;
        self.lockservice_lookups += other.lockservice_lookups;
        self.cache_hits += other.cache_hits;
        self.wall_events += other.wall_events;
    }

    pub const FIELDS: [&'static str; 7] = [
        "ops_issued",
        "ops_acked",
        "ops_lost",
        "attempts_total",
        "lockservice_lookups",
        "cache_hits",
        "wall_events",
    ];

    pub fn values(&self) -> [u64; 7] {
        [
            self.ops_issued,
            self.ops_acked,
            self.ops_lost,
            self.attempts_total,
            self.lockservice_lookups,
            self.cache_hits,
            self.wall_events,
        ]
    }
}

impl fmt::Display for RunMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in Self::FIELDS.iter().zip(self.values()).enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Put,
    Get,
}

impl OpKind {
    fn as_str(self) -> &'static str {
        match self {
            OpKind::Put => "put",
            OpKind::Get => "get",
        }
    }
}

/// What the client saw for one operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub op: u64,
    pub kind: OpKind,
    pub key: Vec<u8>,
    /// The value written, or the value read back.
    pub value: Vec<u8>,
    /// `None` when the call gave up or, in naive mode, was never checked.
    pub status: Option<Status>,
    pub acked: bool,
    pub attempts: u32,
}

#[derive(Default)]
struct Counter {
    attempts: u32,
    not_owner_retries: u32,
}

impl CallObserver for Counter {
    fn attempt(&mut self, _attempt: u32, _target: &str, _resolved: &str) {
        self.attempts += 1;
    }

    fn retry(&mut self, _attempt: u32, reason: RetryReason) {
        if reason == RetryReason::NotOwner {
            self.not_owner_retries += 1;
        }
    }
}

/// A finished run.
pub struct Simulation {
    pub metrics: RunMetrics,
    pub ops: Vec<OpRecord>,
    /// Retries caused by `not-owner` replies, library mode only.
    pub not_owner_retries: u64,
    pub world: World,
}

impl Simulation {
    pub fn run(s: &Scenario) -> Self {
        let mut world = World::new(s);
        let lock = world.lockservice().clone();
        let map = world.tablet_map().clone();

        let mut fallback = StaticResolver::default();
        for (i, t) in s.tablets.tablets().iter().enumerate() {
            fallback.insert(t.lease_name().as_str(), s.initial_owner(i));
        }
        for id in s.servers.iter().chain(&s.standbys) {
            fallback.insert(id.as_str(), id.as_str());
        }
        let cached = Arc::new(Cached::new(LeaseResolver::new(lock.clone()), Arc::new(world.clock())));
        let chain = Chain::new()
            .then(TabletStage::new(map.clone()))
            .then(cached.clone())
            .then(fallback);
        let policy = CallPolicy::default();
        // The naive flow's unspecified timeout is the first backoff step.
        let naive_timeout = policy.initial_backoff;

        let mut rng = SeedStreams::new(s.seed).stream(CLIENT);
        let w = &s.workload;
        let mut ops = Vec::with_capacity(w.ops as usize);
        let mut metrics = RunMetrics::default();
        let mut not_owner_retries = 0;

        for op in 0..w.ops {
            let kind = if rng.gen::<f64>() < w.put_fraction { OpKind::Put } else { OpKind::Get };
            let key = vec![w.keys[rng.gen_range(0..w.keys.len())]];
            let think = rng.gen_range(0..=w.think.as_millis());
            if think > 0 {
                world.sleep(SimDuration::from_millis(think));
            }
            let value = match kind {
                OpKind::Put => format!("v{op}").into_bytes(),
                OpKind::Get => Vec::new(),
            };
            let method = match kind {
                OpKind::Put => PUT,
                OpKind::Get => GET,
            };
            let req = Request::new(op + 1, method).with_key(key.clone()).with_value(value.clone());
            metrics.ops_issued += 1;

            let record = match s.client_mode {
                ClientMode::Naive => {
                    metrics.attempts_total += 1;
                    // Route, look up, send once, move on.
                    let name = map.lock().lease_for_key(&key);
                    let owner = lock.lock().lookup(&name).map(|v| v.owner);
                    if let Ok(owner) = owner {
                        if let Ok(frame) = req.clone().with_name(name).encode() {
                            let _ = world.round_trip(&owner, frame, naive_timeout);
                        }
                    }
                    OpRecord {
                        op,
                        kind,
                        key,
                        value,
                        status: None,
                        acked: true,
                        attempts: 1,
                    }
                }
                ClientMode::Library => {
                    let mut counter = Counter::default();
                    let result = call_observed(&mut world, &chain, &req, &policy, &mut counter);
                    metrics.attempts_total += u64::from(counter.attempts);
                    not_owner_retries += u64::from(counter.not_owner_retries);
                    let status = result.as_ref().ok().map(|o| o.response.status);
                    let acked = match kind {
                        OpKind::Put => status == Some(Status::Ok),
                        OpKind::Get => status.is_some(),
                    };
                    let value = match (kind, &result) {
                        (OpKind::Get, Ok(o)) if o.response.status == Status::Ok => o.response.value.clone(),
                        _ => value,
                    };
                    OpRecord {
                        op,
                        kind,
                        key,
                        value,
                        status,
                        acked,
                        attempts: counter.attempts,
                    }
                }
            };
            if record.acked {
                metrics.ops_acked += 1;
                world.record(
                    CLIENT,
                    TraceEvent::Ack,
                    format!(
                        "op={op} kind={} key={} value={} attempts={}",
                        record.kind.as_str(),
                        hex::encode(&record.key),
                        hex::encode(&record.value),
                        record.attempts
                    ),
                );
            }
            ops.push(record);
        }
        world.flush();

        metrics.ops_lost = lost_puts(world.trace()).len() as u64;
        metrics.lockservice_lookups = lock.lock().lookup_count();
        metrics.cache_hits = cached.stats().hits;
        metrics.wall_events = world.events_processed();
        Self {
            metrics,
            ops,
            not_owner_retries,
            world,
        }
    }

    pub fn trace(&self) -> &Trace {
        self.world.trace()
    }

    pub fn into_parts(self) -> (RunMetrics, Trace) {
        (self.metrics, self.world.into_trace())
    }

    /// Last value acknowledged per key by a put.
    pub fn last_acked_puts(&self) -> BTreeMap<Vec<u8>, Vec<u8>> {
        self.ops
            .iter()
            .filter(|o| o.kind == OpKind::Put && o.acked)
            .map(|o| (o.key.clone(), o.value.clone()))
            .collect()
    }
}

pub fn run_scenario(s: &Scenario) -> (RunMetrics, Trace) {
    Simulation::run(s).into_parts()
}

/// One per-trial output line.
pub fn metrics_line(trial: u64, seed: u64, mode: ClientMode, m: &RunMetrics, trace: &Trace) -> String {
    format!(
        "trial={trial} seed={seed} mode={mode} {m} trace_hash={:#018x}",
        trace_hash(trace)
    )
}

pub fn total_line(trials: u64, m: &RunMetrics) -> String {
    format!("TOTAL trials={trials} {m}")
}
