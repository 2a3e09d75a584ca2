use std::collections::BTreeMap;

use super::{Next, ResolveContext, ResolveError, Resolution, Stage, StageOutcome, DEFAULT_TIMEOUT, TIMEOUT_FLOOR};
use crate::lockservice::{LeaseError, LeaseName, SharedLockService};
use crate::sim::SimDuration;

/// Resolves a lease name to its current owner. The timeout guess is the
/// lease's remaining lifetime, clamped below by a floor.
#[derive(Debug, Clone)]
pub struct LeaseResolver {
    lockservice: SharedLockService,
    floor: SimDuration,
}

impl LeaseResolver {
    pub fn new(lockservice: SharedLockService) -> Self {
        Self {
            lockservice,
            floor: TIMEOUT_FLOOR,
        }
    }

    pub fn with_floor(mut self, floor: SimDuration) -> Self {
        self.floor = floor;
        self
    }
}

impl Stage for LeaseResolver {
    fn resolve(&self, ctx: &ResolveContext, _next: Next<'_>) -> Result<StageOutcome, ResolveError> {
        let Some(name) = &ctx.name else {
            return Ok(StageOutcome::NoMatch);
        };
        let looked_up = self.lockservice.lock().lookup(name);
        match looked_up {
            Ok(view) => Ok(StageOutcome::Resolved(Resolution {
                target: view.owner,
                timeout_guess: view.remaining.max(self.floor),
                epoch: Some(view.epoch),
                resolved_name: name.clone(),
                lease_remaining: Some(view.remaining),
            })),
            Err(LeaseError::NoOwner) => Ok(StageOutcome::NoMatch),
            Err(other) => Err(ResolveError::Stage(other.to_string())),
        }
    }
}

/// Fixed name-to-address table; the stand-in for hostname resolution.
/// Matches exact names only.
#[derive(Debug, Clone, Default)]
pub struct StaticResolver {
    table: BTreeMap<String, String>,
    timeout: SimDuration,
}

impl StaticResolver {
    pub fn new(table: BTreeMap<String, String>) -> Self {
        Self {
            table,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, address: impl Into<String>) {
        self.table.insert(name.into(), address.into());
    }
}

impl Stage for StaticResolver {
    fn resolve(&self, ctx: &ResolveContext, _next: Next<'_>) -> Result<StageOutcome, ResolveError> {
        let hit = ctx
            .name
            .as_ref()
            .and_then(|name| self.table.get(name.as_str()).map(|addr| (name, addr)));
        Ok(match hit {
            Some((name, addr)) => StageOutcome::Resolved(Resolution {
                target: addr.clone(),
                timeout_guess: self.timeout,
                epoch: None,
                resolved_name: name.clone(),
                lease_remaining: None,
            }),
            None => StageOutcome::NoMatch,
        })
    }
}

/// Anything that can say which name serves a key.
pub trait KeyRouter: Send + Sync {
    fn route(&self, key: &[u8]) -> Option<LeaseName>;
}

/// Rewrites a keyed request to the lease name of the tablet covering the key
/// and defers to the rest of the chain. The router is consulted on every
/// call, so a split is visible to the very next resolution.
#[derive(Debug, Clone)]
pub struct TabletStage<R> {
    router: R,
}

impl<R: KeyRouter> TabletStage<R> {
    pub fn new(router: R) -> Self {
        Self { router }
    }
}

impl<R: KeyRouter> Stage for TabletStage<R> {
    fn resolve(&self, ctx: &ResolveContext, next: Next<'_>) -> Result<StageOutcome, ResolveError> {
        let Some(key) = &ctx.key else {
            return next.run(ctx);
        };
        match self.router.route(key) {
            Some(name) => next.run(&ctx.with_name(name)),
            None => Ok(StageOutcome::NoMatch),
        }
    }
}

/// A stage backed by a closure taking `(ctx, next)`.
pub struct FnStage<F>(F);

pub fn stage_fn<F>(f: F) -> FnStage<F>
where
    F: Fn(&ResolveContext, Next<'_>) -> Result<StageOutcome, ResolveError> + Send + Sync,
{
    FnStage(f)
}

impl<F> Stage for FnStage<F>
where
    F: Fn(&ResolveContext, Next<'_>) -> Result<StageOutcome, ResolveError> + Send + Sync,
{
    fn resolve(&self, ctx: &ResolveContext, next: Next<'_>) -> Result<StageOutcome, ResolveError> {
        (self.0)(ctx, next)
    }
}
