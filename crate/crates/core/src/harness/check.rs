//! Post-hoc checks over a finished trace.

use std::collections::{BTreeMap, HashMap};

use crate::sim::{SimTime, Trace, TraceEntry, TraceEvent};
use crate::tabletkv::TABLET_LEASE_PREFIX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub at: SimTime,
    pub message: String,
}

#[derive(Debug, Clone)]
struct Interval {
    owner: String,
    epoch: u64,
    start: u64,
    end: u64,
}

fn num(e: &TraceEntry, key: &str) -> Option<u64> {
    e.field(key)?.parse().ok()
}

/// Lease exclusion and ownership safety.
///
/// Rebuilds each lease's ownership intervals from the lockservice entries
/// and reports any grant that overlaps a still-live interval on the same
/// name, and any `apply` by a server outside its own interval for that tablet.
pub fn check_trace(trace: &Trace) -> Vec<Violation> {
    let mut live: BTreeMap<String, Interval> = BTreeMap::new();
    let mut out = Vec::new();
    let mut flag = |e: &TraceEntry, message: String| out.push(Violation { at: e.at, message });

    for e in trace.iter() {
        let at = e.at.as_millis();
        match e.event {
            TraceEvent::LeaseGrant | TraceEvent::LeaseRenew | TraceEvent::LeaseRelease => {
                let (Some(name), Some(owner), Some(epoch), Some(expiry)) =
                    (e.field("name"), e.field("owner"), num(e, "epoch"), num(e, "expiry_ms"))
                else {
                    flag(e, format!("malformed lease entry `{}`", e.detail));
                    continue;
                };
                let current = live.get_mut(name).filter(|iv| at < iv.end);
                match (e.event, current) {
                    (TraceEvent::LeaseGrant, Some(iv)) => {
                        flag(e, format!("{name} granted to {owner} while {} holds it until {}", iv.owner, iv.end));
                    }
                    (TraceEvent::LeaseGrant, None) => {
                        let iv = Interval {
                            owner: owner.to_string(),
                            epoch,
                            start: at,
                            end: expiry,
                        };
                        if let Some(prev) = live.insert(name.to_string(), iv) {
                            if epoch <= prev.epoch {
                                flag(e, format!("{name} epoch went from {} to {epoch}", prev.epoch));
                            }
                        }
                    }
                    (_, Some(iv)) if iv.owner == owner && iv.epoch == epoch => {
                        iv.end = if e.event == TraceEvent::LeaseRenew { expiry } else { at };
                    }
                    _ => flag(e, format!("{} of {name} by {owner} without a live grant", e.event)),
                }
            }
            TraceEvent::Apply => {
                let Some(tablet) = e.field("tablet") else {
                    flag(e, "apply without tablet".into());
                    continue;
                };
                let name = format!("{TABLET_LEASE_PREFIX}{tablet}");
                let inside = live.get(&name).is_some_and(|iv| {
                    iv.owner == e.actor && iv.start <= at && at < iv.end && num(e, "epoch") == Some(iv.epoch)
                });
                if !inside {
                    flag(e, format!("{} applied to {tablet} without holding {name}", e.actor));
                }
            }
            _ => {}
        }
    }
    out
}

/// Acknowledged puts with no durable `apply` of the same key and value at or
/// before the acknowledgment. Values are unique per op, so a match is exact.
pub fn lost_puts(trace: &Trace) -> Vec<u64> {
    let mut first_apply: HashMap<(&str, &str), SimTime> = HashMap::new();
    let mut lost = Vec::new();
    for e in trace.iter() {
        match e.event {
            TraceEvent::Apply => {
                if let (Some(k), Some(v)) = (e.field("key"), e.field("value")) {
                    first_apply.entry((k, v)).or_insert(e.at);
                }
            }
            TraceEvent::Ack if e.field("kind") == Some("put") => {
                let (Some(k), Some(v)) = (e.field("key"), e.field("value")) else { continue };
                let durable = first_apply.get(&(k, v)).is_some_and(|t| *t <= e.at);
                if !durable {
                    lost.push(num(e, "op").unwrap_or(u64::MAX));
                }
            }
            _ => {}
        }
    }
    lost
}
