//! Tablet server: `kv.put`, `kv.get` and `admin.split` over the RPC registry.

use std::collections::BTreeMap;

use super::map::{tablet_id_of, SharedTabletMap};
use crate::lockservice::{LeaseName, SharedLockService};
use crate::rpc::{Exchange, HandlerResult, Registry, Reject, Request, Scope, Server};
use crate::sim::SimDuration;

pub const PUT: &str = "kv.put";
pub const GET: &str = "kv.get";
pub const SPLIT: &str = "admin.split";

pub const NOT_FOUND: &str = "not-found";

/// A write that reached a tablet, waiting to be made durable by the host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Applied {
    pub tablet: String,
    pub epoch: u64,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

/// A completed split, reported to the host for bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDone {
    pub parent: String,
    pub children: [String; 2],
}

#[derive(Debug)]
pub struct TabletState {
    tables: BTreeMap<String, BTreeMap<Vec<u8>, Vec<u8>>>,
    map: SharedTabletMap,
    lockservice: SharedLockService,
    lease_ttl: SimDuration,
    applied: Vec<Applied>,
    splits: Vec<SplitDone>,
}

pub type TabletServer = Server<TabletState>;

impl TabletState {
    pub fn new(map: SharedTabletMap, lockservice: SharedLockService, lease_ttl: SimDuration) -> Self {
        Self {
            tables: BTreeMap::new(),
            map,
            lockservice,
            lease_ttl,
            applied: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn table(&self, tablet: &str) -> Option<&BTreeMap<Vec<u8>, Vec<u8>>> {
        self.tables.get(tablet)
    }

    pub fn value(&self, tablet: &str, key: &[u8]) -> Option<&[u8]> {
        self.tables.get(tablet)?.get(key).map(Vec::as_slice)
    }

    /// Installs recovered contents for a tablet, replacing anything there.
    pub fn load(&mut self, tablet: &str, contents: BTreeMap<Vec<u8>, Vec<u8>>) {
        self.tables.insert(tablet.to_string(), contents);
    }

    /// Forgets all volatile state, as after a crash.
    pub fn wipe(&mut self) {
        self.tables.clear();
        self.applied.clear();
        self.splits.clear();
    }

    pub fn drain_applied(&mut self) -> Vec<Applied> {
        std::mem::take(&mut self.applied)
    }

    pub fn drain_splits(&mut self) -> Vec<SplitDone> {
        std::mem::take(&mut self.splits)
    }
}

pub fn tablet_server(
    id: impl Into<String>,
    map: SharedTabletMap,
    lockservice: SharedLockService,
    lease_ttl: SimDuration,
) -> TabletServer {
    Server::new(id, TabletState::new(map, lockservice, lease_ttl), registry())
}

pub fn registry() -> Registry<TabletState> {
    Registry::new()
        .register(PUT, Scope::Lease, put)
        .register(GET, Scope::Lease, get)
        .register(SPLIT, Scope::Lease, split)
}

/// Tablet addressed by the request, checked against the live map.
fn addressed_tablet(ex: &Exchange<'_, TabletState>, req: &Request) -> Result<String, Reject> {
    let name = req.name.as_ref().ok_or(Reject::NotOwner)?;
    let id = tablet_id_of(name).ok_or_else(|| Reject::App(format!("{name} is not a tablet")))?;
    let map = ex.state.map.lock();
    match map.get(id) {
        Some(t) if t.contains(&req.key) => Ok(id.to_string()),
        // Stale routing: the tablet is gone or no longer covers the key.
        _ => Err(Reject::NotOwner),
    }
}

fn put(ex: &mut Exchange<'_, TabletState>, req: &Request) -> HandlerResult {
    let tablet = addressed_tablet(ex, req)?;
    let epoch = req
        .name
        .as_ref()
        .and_then(|n| ex.leases.get(n))
        .map(|h| h.epoch)
        .unwrap_or_default();
    ex.state
        .tables
        .entry(tablet.clone())
        .or_default()
        .insert(req.key.clone(), req.value.clone());
    ex.state.applied.push(Applied {
        tablet,
        epoch,
        key: req.key.clone(),
        value: req.value.clone(),
    });
    Ok(Vec::new())
}

fn get(ex: &mut Exchange<'_, TabletState>, req: &Request) -> HandlerResult {
    let tablet = addressed_tablet(ex, req)?;
    ex.state
        .value(&tablet, &req.key)
        .map(<[u8]>::to_vec)
        .ok_or_else(|| Reject::App(NOT_FOUND.to_string()))
}

/// `key` carries the tablet id, `value` the split key. The parent's data is
/// partitioned and both child leases are taken before the handler returns,
/// so no request ever observes the children unowned.
fn split(ex: &mut Exchange<'_, TabletState>, req: &Request) -> HandlerResult {
    let id = String::from_utf8(req.key.clone()).map_err(|_| "tablet id is not utf-8")?;
    let name = req.name.as_ref().ok_or(Reject::NotOwner)?;
    if tablet_id_of(name) != Some(id.as_str()) {
        return Err(Reject::App(format!("{name} does not name tablet {id}")));
    }
    let (left, right) = ex.state.map.split(&id, &req.value).map_err(|e| e.to_string())?;

    let mut parent = ex.state.tables.remove(&id).unwrap_or_default();
    let upper = parent.split_off(&right.start);
    ex.state.tables.insert(left.id.clone(), parent);
    ex.state.tables.insert(right.id.clone(), upper);

    let mut lock = ex.state.lockservice.lock();
    // The parent lease may already have lapsed; the split stands regardless.
    let _ = lock.release(name, ex.server_id);
    ex.leases.forget(name);
    for child in [&left, &right] {
        let child_name: LeaseName = child.lease_name();
        let record = lock
            .acquire(&child_name, ex.server_id, ex.state.lease_ttl)
            .map_err(|e| format!("cannot acquire {child_name}: {e}"))?;
        ex.leases.record(&record);
    }
    drop(lock);
    ex.state.splits.push(SplitDone {
        parent: id,
        children: [left.id.clone(), right.id.clone()],
    });
    Ok(format!("{} {}", left.id, right.id).into_bytes())
}
