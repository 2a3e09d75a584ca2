//! In-process lease directory.
//!
//! Grants exclusive, time-limited leases on names and answers "who owns this
//! name and for how much longer". Every successful acquire of a name bumps its
//! epoch by one, so servers can fence out requests resolved against an older
//! owner. Expiry is exclusive (a lease is dead at `acquired_at + ttl`) and is
//! applied lazily whenever a name is touched.

pub mod service;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};

use crate::sim::{Clock, SimDuration, SimTime};

/// `/`-separated lease path.
///
/// Segments are nonempty and may not contain whitespace, control characters
/// or `@` (the wire codec uses `@` to attach a fencing epoch).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeaseName(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid lease name `{name}`: {reason}")]
pub struct InvalidLeaseName {
    pub name: String,
    pub reason: &'static str,
}

impl LeaseName {
    pub fn new(path: impl Into<String>) -> Result<Self, InvalidLeaseName> {
        let path = path.into();
        let reason = if path.is_empty() {
            Some("empty")
        } else if path.split('/').any(str::is_empty) {
            Some("empty segment")
        } else if path
            .chars()
            .any(|c| c == '@' || c.is_whitespace() || c.is_control())
        {
            Some("reserved character")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(InvalidLeaseName { name: path, reason }),
            None => Ok(LeaseName(path)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }
}

impl fmt::Display for LeaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for LeaseName {
    type Err = InvalidLeaseName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LeaseName::new(s)
    }
}

impl AsRef<str> for LeaseName {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaseRecord {
    pub name: LeaseName,
    pub owner: String,
    pub acquired_at: SimTime,
    pub ttl: SimDuration,
    pub epoch: u64,
}

impl LeaseRecord {
    pub fn expiry(&self) -> SimTime {
        self.acquired_at + self.ttl
    }

    pub fn is_live_at(&self, now: SimTime) -> bool {
        now < self.expiry()
    }
}

/// Answer to [`LockService::lookup`]; `remaining` is always positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaseView {
    pub owner: String,
    pub remaining: SimDuration,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LeaseError {
    #[error("held by {owner}")]
    Held { owner: String },
    #[error("not-owner")]
    NotOwner,
    #[error("no-owner")]
    NoOwner,
    #[error("ttl must be positive")]
    InvalidTtl,
}

impl LeaseError {
    /// Short wire token for the error.
    pub fn code(&self) -> &'static str {
        match self {
            LeaseError::Held { .. } => "held",
            LeaseError::NotOwner => "not-owner",
            LeaseError::NoOwner => "no-owner",
            LeaseError::InvalidTtl => "invalid-ttl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaseEventKind {
    Grant,
    Renew,
    Release,
    Expire,
}

/// Journal entry describing a state change, drained by whoever keeps the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaseEvent {
    pub at: SimTime,
    pub kind: LeaseEventKind,
    pub record: LeaseRecord,
}

#[derive(Debug, Default)]
struct Slot {
    last_epoch: u64,
    live: Option<LeaseRecord>,
}

pub struct LockService {
    clock: Arc<dyn Clock>,
    slots: BTreeMap<LeaseName, Slot>,
    journal: Vec<LeaseEvent>,
    lookups: u64,
}

impl fmt::Debug for LockService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LockService")
            .field("now", &self.clock.now())
            .field("leases", &self.slots.len())
            .field("lookups", &self.lookups)
            .finish()
    }
}

/// Lockservice handle shared by the resolver, servers and harness.
#[derive(Debug, Clone)]
pub struct SharedLockService(Arc<Mutex<LockService>>);

impl SharedLockService {
    pub fn new(service: LockService) -> Self {
        Self(Arc::new(Mutex::new(service)))
    }

    pub fn lock(&self) -> MutexGuard<'_, LockService> {
        self.0.lock().expect("lockservice mutex poisoned")
    }
}

impl LockService {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            slots: BTreeMap::new(),
            journal: Vec::new(),
            lookups: 0,
        }
    }

    pub fn into_shared(self) -> SharedLockService {
        SharedLockService::new(self)
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    fn log(&mut self, kind: LeaseEventKind, record: LeaseRecord) {
        let at = self.now();
        self.journal.push(LeaseEvent { at, kind, record });
    }

    /// Drops the live record of `name` if it has expired.
    fn prune(&mut self, name: &LeaseName) {
        let now = self.now();
        let expired = match self.slots.get_mut(name) {
            Some(slot) if slot.live.as_ref().is_some_and(|r| !r.is_live_at(now)) => slot.live.take(),
            _ => None,
        };
        if let Some(record) = expired {
            self.log(LeaseEventKind::Expire, record);
        }
    }

    /// Grants `name` to `owner`, or renews it if `owner` already holds it.
    pub fn acquire(
        &mut self,
        name: &LeaseName,
        owner: &str,
        ttl: SimDuration,
    ) -> Result<LeaseRecord, LeaseError> {
        if ttl.is_zero() {
            return Err(LeaseError::InvalidTtl);
        }
        self.prune(name);
        let now = self.now();
        let slot = self.slots.entry(name.clone()).or_default();
        if let Some(live) = slot.live.as_mut() {
            if live.owner != owner {
                return Err(LeaseError::Held {
                    owner: live.owner.clone(),
                });
            }
            live.acquired_at = now;
            live.ttl = ttl;
            let record = live.clone();
            self.log(LeaseEventKind::Renew, record.clone());
            return Ok(record);
        }
        slot.last_epoch += 1;
        let record = LeaseRecord {
            name: name.clone(),
            owner: owner.to_string(),
            acquired_at: now,
            ttl,
            epoch: slot.last_epoch,
        };
        slot.live = Some(record.clone());
        self.log(LeaseEventKind::Grant, record.clone());
        Ok(record)
    }

    /// Restarts the owner's lease period; the epoch stays the same.
    pub fn renew(&mut self, name: &LeaseName, owner: &str) -> Result<LeaseRecord, LeaseError> {
        self.prune(name);
        let now = self.now();
        let live = self
            .slots
            .get_mut(name)
            .and_then(|s| s.live.as_mut())
            .filter(|r| r.owner == owner)
            .ok_or(LeaseError::NotOwner)?;
        live.acquired_at = now;
        let record = live.clone();
        self.log(LeaseEventKind::Renew, record.clone());
        Ok(record)
    }

    pub fn release(&mut self, name: &LeaseName, owner: &str) -> Result<(), LeaseError> {
        self.prune(name);
        let slot = self.slots.get_mut(name).ok_or(LeaseError::NotOwner)?;
        match &slot.live {
            Some(r) if r.owner == owner => {
                let record = slot.live.take().expect("checked above");
                self.log(LeaseEventKind::Release, record);
                Ok(())
            }
            _ => Err(LeaseError::NotOwner),
        }
    }

    /// Current owner, remaining lifetime and epoch of `name`.
    pub fn lookup(&mut self, name: &LeaseName) -> Result<LeaseView, LeaseError> {
        self.lookups += 1;
        self.prune(name);
        let now = self.now();
        let live = self
            .slots
            .get(name)
            .and_then(|s| s.live.as_ref())
            .ok_or(LeaseError::NoOwner)?;
        Ok(LeaseView {
            owner: live.owner.clone(),
            remaining: live.expiry() - now,
            epoch: live.epoch,
        })
    }

    /// Unexpired record for `name` without counting a lookup or pruning.
    pub fn peek(&self, name: &LeaseName) -> Option<&LeaseRecord> {
        let now = self.now();
        self.slots
            .get(name)
            .and_then(|s| s.live.as_ref())
            .filter(|r| r.is_live_at(now))
    }

    /// Number of [`lookup`](Self::lookup) calls served.
    pub fn lookup_count(&self) -> u64 {
        self.lookups
    }

    pub fn drain_journal(&mut self) -> Vec<LeaseEvent> {
        std::mem::take(&mut self.journal)
    }
}
