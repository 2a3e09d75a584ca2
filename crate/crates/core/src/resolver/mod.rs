//! Resolution of requests to targets.
//!
//! A [`Stage`] looks at a [`ResolveContext`] and either produces a
//! [`Resolution`], reports no match, or rewrites the context and hands it to
//! the rest of the chain through [`Next`]. A [`Chain`] composes stages in list
//! order and is what the RPC client calls into. [`Cached`] wraps a stage (or a
//! resolver) and remembers resolutions per resolved name until the lease that
//! produced them runs out.
//!
//! ```
//! use std::collections::BTreeMap;
//! use leasewire::resolver::{Chain, ResolveContext, Resolver, StaticResolver};
//!
//! let dns = StaticResolver::new(BTreeMap::from([("db".to_string(), "10.0.0.2:99".to_string())]));
//! let chain = Chain::new().then(dns);
//! let r = chain.resolve(&ResolveContext::for_name("get", "db".parse().unwrap())).unwrap();
//! assert_eq!(r.target, "10.0.0.2:99");
//! ```

mod cache;
mod stages;

use std::cell::Cell;
use std::sync::Arc;

use crate::lockservice::LeaseName;
use crate::sim::SimDuration;

pub use cache::{CacheStats, Cached};
pub use stages::{stage_fn, FnStage, KeyRouter, LeaseResolver, StaticResolver, TabletStage};

/// Lower bound on any lease-derived timeout guess.
pub const TIMEOUT_FLOOR: SimDuration = SimDuration::from_millis(100);

/// Timeout guess for resolutions that carry no lease information.
pub const DEFAULT_TIMEOUT: SimDuration = SimDuration::from_secs(1);

/// What a stage sees about the request being routed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolveContext {
    pub method: String,
    /// Explicit target name, or the name a previous stage rewrote to.
    pub name: Option<LeaseName>,
    /// Request key, for content-based routing.
    pub key: Option<Vec<u8>>,
}

impl ResolveContext {
    pub fn for_name(method: impl Into<String>, name: LeaseName) -> Self {
        Self {
            method: method.into(),
            name: Some(name),
            key: None,
        }
    }

    pub fn for_key(method: impl Into<String>, key: impl Into<Vec<u8>>) -> Self {
        Self {
            method: method.into(),
            name: None,
            key: Some(key.into()),
        }
    }

    /// Same request, routed to `name`.
    pub fn with_name(&self, name: LeaseName) -> Self {
        Self {
            name: Some(name),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub target: String,
    pub timeout_guess: SimDuration,
    /// Fencing token, present for lease resolutions.
    pub epoch: Option<u64>,
    pub resolved_name: LeaseName,
    /// Unclamped lease lifetime left at resolution time; bounds cache entries.
    pub lease_remaining: Option<SimDuration>,
}

impl Resolution {
    pub fn is_lease(&self) -> bool {
        self.epoch.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome {
    Resolved(Resolution),
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("resolution-failed: no stage matched {0}")]
    ResolutionFailed(String),
    #[error("resolver stage failed: {0}")]
    Stage(String),
}

/// One link of a resolver chain.
pub trait Stage: Send + Sync {
    fn resolve(&self, ctx: &ResolveContext, next: Next<'_>) -> Result<StageOutcome, ResolveError>;

    /// Forget anything remembered about `name`.
    fn invalidate(&self, _name: &LeaseName) {}
}

/// A complete lookup function: request context in, target out.
pub trait Resolver {
    fn resolve(&self, ctx: &ResolveContext) -> Result<Resolution, ResolveError>;

    fn invalidate(&self, _name: &LeaseName) {}
}

/// The remainder of a chain, handed to each stage. Consumed on use, so a
/// stage can defer at most once.
pub struct Next<'a> {
    rest: &'a [Box<dyn Stage>],
    deferred: &'a Cell<bool>,
}

impl Next<'_> {
    pub fn run(self, ctx: &ResolveContext) -> Result<StageOutcome, ResolveError> {
        self.deferred.set(true);
        run_stages(self.rest, ctx)
    }

    /// A continuation with nothing after it.
    pub fn run_empty<R>(f: impl FnOnce(Next<'_>) -> R) -> R {
        let deferred = Cell::new(false);
        f(Next {
            rest: &[],
            deferred: &deferred,
        })
    }
}

fn run_stages(stages: &[Box<dyn Stage>], ctx: &ResolveContext) -> Result<StageOutcome, ResolveError> {
    for (i, stage) in stages.iter().enumerate() {
        let deferred = Cell::new(false);
        let next = Next {
            rest: &stages[i + 1..],
            deferred: &deferred,
        };
        match stage.resolve(ctx, next)? {
            StageOutcome::Resolved(r) => return Ok(StageOutcome::Resolved(r)),
            // The rest of the chain already ran on the stage's behalf.
            StageOutcome::NoMatch if deferred.get() => return Ok(StageOutcome::NoMatch),
            StageOutcome::NoMatch => continue,
        }
    }
    Ok(StageOutcome::NoMatch)
}

/// Stages tried in order; first resolution wins.
#[derive(Default)]
pub struct Chain {
    stages: Vec<Box<dyn Stage>>,
}

impl std::fmt::Debug for Chain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chain").field("stages", &self.stages.len()).finish()
    }
}

impl Chain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_stages(stages: Vec<Box<dyn Stage>>) -> Self {
        Self { stages }
    }

    pub fn then(mut self, stage: impl Stage + 'static) -> Self {
        self.stages.push(Box::new(stage));
        self
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

fn describe(ctx: &ResolveContext) -> String {
    match (&ctx.name, &ctx.key) {
        (Some(n), _) => format!("name {n}"),
        (None, Some(k)) => format!("key {}", String::from_utf8_lossy(k)),
        (None, None) => format!("method {}", ctx.method),
    }
}

impl Resolver for Chain {
    fn resolve(&self, ctx: &ResolveContext) -> Result<Resolution, ResolveError> {
        match run_stages(&self.stages, ctx)? {
            StageOutcome::Resolved(r) => Ok(r),
            StageOutcome::NoMatch => Err(ResolveError::ResolutionFailed(describe(ctx))),
        }
    }

    fn invalidate(&self, name: &LeaseName) {
        for stage in &self.stages {
            stage.invalidate(name);
        }
    }
}

/// A chain nested inside another chain behaves like one stage.
impl Stage for Chain {
    fn resolve(&self, ctx: &ResolveContext, _next: Next<'_>) -> Result<StageOutcome, ResolveError> {
        run_stages(&self.stages, ctx)
    }

    fn invalidate(&self, name: &LeaseName) {
        Resolver::invalidate(self, name);
    }
}

impl<S: Stage + ?Sized> Stage for Arc<S> {
    fn resolve(&self, ctx: &ResolveContext, next: Next<'_>) -> Result<StageOutcome, ResolveError> {
        (**self).resolve(ctx, next)
    }

    fn invalidate(&self, name: &LeaseName) {
        (**self).invalidate(name);
    }
}

impl<R: Resolver + ?Sized> Resolver for &R {
    fn resolve(&self, ctx: &ResolveContext) -> Result<Resolution, ResolveError> {
        (**self).resolve(ctx)
    }

    fn invalidate(&self, name: &LeaseName) {
        (**self).invalidate(name);
    }
}
