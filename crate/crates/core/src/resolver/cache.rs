use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::{Next, ResolveContext, ResolveError, Resolution, Resolver, Stage, StageOutcome};
use crate::lockservice::LeaseName;
use crate::sim::{Clock, SimTime};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Remembers resolutions by resolved name.
///
/// An entry lives until `now + timeout_guess` at population time, and never
/// past the lease lifetime that produced it. Only positive results are
/// stored. Lookups use the context's name, so the wrapper belongs at a point
/// in the chain where the name is already known.
pub struct Cached<S> {
    inner: S,
    clock: Arc<dyn Clock>,
    entries: Mutex<BTreeMap<LeaseName, (Resolution, SimTime)>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<S> std::fmt::Debug for Cached<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cached").field("stats", &self.stats()).finish()
    }
}

impl<S> Cached<S> {
    pub fn new(inner: S, clock: Arc<dyn Clock>) -> Self {
        Self {
            inner,
            clock,
            entries: Mutex::new(BTreeMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache mutex poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, ctx: &ResolveContext) -> Option<Resolution> {
        let name = ctx.name.as_ref()?;
        let now = self.clock.now();
        let mut entries = self.entries.lock().expect("cache mutex poisoned");
        match entries.get(name) {
            Some((res, deadline)) if now < *deadline => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(res.clone())
            }
            Some(_) => {
                entries.remove(name);
                None
            }
            None => None,
        }
    }

    fn store(&self, res: &Resolution) {
        let now = self.clock.now();
        let life = match res.lease_remaining {
            Some(remaining) => res.timeout_guess.min(remaining),
            None => res.timeout_guess,
        };
        if life.is_zero() {
            return;
        }
        self.entries
            .lock()
            .expect("cache mutex poisoned")
            .insert(res.resolved_name.clone(), (res.clone(), now + life));
    }

    fn forget(&self, name: &LeaseName) {
        self.entries.lock().expect("cache mutex poisoned").remove(name);
    }
}

impl<S: Stage> Stage for Cached<S> {
    fn resolve(&self, ctx: &ResolveContext, next: Next<'_>) -> Result<StageOutcome, ResolveError> {
        if let Some(hit) = self.lookup(ctx) {
            return Ok(StageOutcome::Resolved(hit));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let out = self.inner.resolve(ctx, next)?;
        if let StageOutcome::Resolved(res) = &out {
            self.store(res);
        }
        Ok(out)
    }

    fn invalidate(&self, name: &LeaseName) {
        self.forget(name);
        self.inner.invalidate(name);
    }
}

impl<R: Resolver> Resolver for Cached<R> {
    fn resolve(&self, ctx: &ResolveContext) -> Result<Resolution, ResolveError> {
        if let Some(hit) = self.lookup(ctx) {
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let res = self.inner.resolve(ctx)?;
        self.store(&res);
        Ok(res)
    }

    fn invalidate(&self, name: &LeaseName) {
        self.forget(name);
        self.inner.invalidate(name);
    }
}
