//! The client call loop: resolve, send with the resolution's timeout, retry
//! on timeout or stale ownership, return on success or application error.

use super::codec::{decode_response, CodecError, Request, Response, Status};
use super::policy::{CallPolicy, InvalidPolicy};
use crate::resolver::{ResolveContext, ResolveError, Resolver};
use crate::sim::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    /// No reply within the attempt's budget, including unreachable targets.
    #[error("timed out")]
    TimedOut,
}

/// How the call loop reaches servers and experiences time.
pub trait Transport {
    fn now(&self) -> SimTime;

    /// Sends one frame to `target` and waits up to `timeout` for the reply frame.
    fn round_trip(&mut self, target: &str, frame: Vec<u8>, timeout: SimDuration) -> Result<Vec<u8>, TransportError>;

    fn sleep(&mut self, duration: SimDuration);
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn now(&self) -> SimTime {
        (**self).now()
    }

    fn round_trip(&mut self, target: &str, frame: Vec<u8>, timeout: SimDuration) -> Result<Vec<u8>, TransportError> {
        (**self).round_trip(target, frame, timeout)
    }

    fn sleep(&mut self, duration: SimDuration) {
        (**self).sleep(duration)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallOutcome {
    /// `ok` or `app-error`.
    pub response: Response,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CallError {
    #[error(transparent)]
    Resolution(#[from] ResolveError),
    #[error("exhausted after {attempts} attempts")]
    Exhausted { attempts: u32 },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Policy(#[from] InvalidPolicy),
}

impl CallError {
    pub fn attempts(&self) -> u32 {
        match self {
            CallError::Exhausted { attempts } => *attempts,
            _ => 0,
        }
    }
}

/// Routing context of a request. An explicit lease name wins; otherwise the
/// key (if any) is offered for content-based routing.
pub fn resolve_context(req: &Request) -> ResolveContext {
    ResolveContext {
        method: req.method.clone(),
        name: req.name.clone(),
        key: (!req.key.is_empty()).then(|| req.key.clone()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryReason {
    TimedOut,
    NotOwner,
}

/// Per-attempt observer, for metrics and narration.
pub trait CallObserver {
    fn attempt(&mut self, _attempt: u32, _target: &str, _resolved: &str) {}
    fn retry(&mut self, _attempt: u32, _reason: RetryReason) {}
}

impl CallObserver for () {}

pub fn call<T, R>(transport: &mut T, resolver: &R, request: &Request, policy: &CallPolicy) -> Result<CallOutcome, CallError>
where
    T: Transport + ?Sized,
    R: Resolver + ?Sized,
{
    call_observed(transport, resolver, request, policy, &mut ())
}

pub fn call_observed<T, R, O>(
    transport: &mut T,
    resolver: &R,
    request: &Request,
    policy: &CallPolicy,
    observer: &mut O,
) -> Result<CallOutcome, CallError>
where
    T: Transport + ?Sized,
    R: Resolver + ?Sized,
    O: CallObserver + ?Sized,
{
    policy.validate()?;
    let ctx = resolve_context(request);
    let started = transport.now();
    let deadline = started + policy.overall_deadline;
    let mut backoff = policy.initial_backoff;
    let mut attempts = 0;

    while attempts < policy.max_attempts && transport.now() < deadline {
        attempts += 1;
        let resolution = resolver.resolve(&ctx)?;
        let budget = if resolution.is_lease() {
            resolution.timeout_guess
        } else {
            backoff
        };
        let budget = budget.min(deadline - transport.now());
        observer.attempt(attempts, &resolution.target, resolution.resolved_name.as_str());

        let mut wire = request.clone();
        wire.name = Some(resolution.resolved_name.clone());
        wire.fence = resolution.epoch;
        let frame = wire.encode()?;

        let reason = match transport.round_trip(&resolution.target, frame, budget) {
            Ok(reply) => {
                let response = decode_response(&reply)?;
                match response.status {
                    Status::Ok | Status::AppError => return Ok(CallOutcome { response, attempts }),
                    Status::NotOwner => RetryReason::NotOwner,
                }
            }
            Err(TransportError::TimedOut) => RetryReason::TimedOut,
        };
        observer.retry(attempts, reason);
        resolver.invalidate(&resolution.resolved_name);
        if attempts >= policy.max_attempts || transport.now() >= deadline {
            break;
        }
        transport.sleep(backoff.min(deadline - transport.now()));
        backoff = policy.next_backoff(backoff);
    }
    Err(CallError::Exhausted { attempts })
}

#[cfg(test)]
mod tests {
    use std::cell::RefCell;
    use std::collections::BTreeMap;
    use std::sync::{Arc, Mutex};

    use super::*;
    use crate::lockservice::LeaseName;
    use crate::resolver::{stage_fn, Chain, Resolution, StaticResolver};
    use crate::rpc::codec::decode_request;

    type Behaviour = Box<dyn FnMut(&str, &Request) -> Option<Response>>;

    /// Replies according to `behaviour`; `None` means the attempt times out.
    struct Scripted {
        now: SimTime,
        behaviour: Behaviour,
        budgets: Vec<u64>,
        sleeps: Vec<u64>,
        seen: Vec<(String, Request)>,
    }

    impl Scripted {
        fn new(behaviour: impl FnMut(&str, &Request) -> Option<Response> + 'static) -> Self {
            Self {
                now: SimTime::ZERO,
                behaviour: Box::new(behaviour),
                budgets: Vec::new(),
                sleeps: Vec::new(),
                seen: Vec::new(),
            }
        }
    }

    impl Transport for Scripted {
        fn now(&self) -> SimTime {
            self.now
        }

        fn round_trip(&mut self, target: &str, frame: Vec<u8>, timeout: SimDuration) -> Result<Vec<u8>, TransportError> {
            let req = decode_request(&frame).unwrap();
            self.budgets.push(timeout.as_millis());
            self.seen.push((target.to_string(), req.clone()));
            match (self.behaviour)(target, &req) {
                Some(resp) => {
                    self.now += SimDuration::from_millis(20);
                    Ok(resp.encode().unwrap())
                }
                None => {
                    self.now += timeout;
                    Err(TransportError::TimedOut)
                }
            }
        }

        fn sleep(&mut self, duration: SimDuration) {
            self.sleeps.push(duration.as_millis());
            self.now += duration;
        }
    }

    fn name(s: &str) -> LeaseName {
        LeaseName::new(s).unwrap()
    }

    /// A lease-like stage answering from a mutable owner table, counting lookups
    /// and invalidations.
    #[derive(Default)]
    struct Table {
        owners: Mutex<BTreeMap<String, (String, u64)>>,
        invalidated: Mutex<Vec<String>>,
    }

    struct TableResolver(Arc<Table>);

    impl Resolver for TableResolver {
        fn resolve(&self, ctx: &ResolveContext) -> Result<Resolution, ResolveError> {
            let n = ctx.name.clone().unwrap();
            let owners = self.0.owners.lock().unwrap();
            let (owner, epoch) = owners.get(n.as_str()).cloned().ok_or(ResolveError::ResolutionFailed(n.to_string()))?;
            Ok(Resolution {
                target: owner,
                timeout_guess: SimDuration::from_secs(7),
                epoch: Some(epoch),
                resolved_name: n,
                lease_remaining: Some(SimDuration::from_secs(7)),
            })
        }

        fn invalidate(&self, name: &LeaseName) {
            self.0.invalidated.lock().unwrap().push(name.to_string());
        }
    }

    fn table(entries: &[(&str, &str, u64)]) -> Arc<Table> {
        let t = Table::default();
        for (n, o, e) in entries {
            t.owners.lock().unwrap().insert(n.to_string(), (o.to_string(), *e));
        }
        Arc::new(t)
    }

    fn put() -> Request {
        Request::new(1, "kv.put").with_name(name("t/1")).with_key("k").with_value("v")
    }

    #[test]
    fn healthy_owner_answers_first_time() {
        let t = table(&[("t/1", "srv1", 1)]);
        let mut net = Scripted::new(|_, req| Some(Response::ok(req.id, "")));
        let out = call(&mut net, &TableResolver(t), &put(), &CallPolicy::default()).unwrap();
        assert_eq!((out.response.status, out.attempts), (Status::Ok, 1));
        assert_eq!(net.budgets, vec![7000]);
        let (target, sent) = &net.seen[0];
        assert_eq!(target, "srv1");
        assert_eq!(sent.fence, Some(1));
    }

    #[test]
    fn app_errors_are_not_retried() {
        let t = table(&[("t/1", "srv1", 1)]);
        let mut net = Scripted::new(|_, req| Some(Response::app_error(req.id, "not-found")));
        let out = call(&mut net, &TableResolver(t), &put(), &CallPolicy::default()).unwrap();
        assert_eq!((out.response.status, out.attempts), (Status::AppError, 1));
        assert_eq!(net.seen.len(), 1);
    }

    #[test]
    fn failover_during_backoff_succeeds_with_fresh_resolution() {
        let t = table(&[("t/1", "srv1", 1)]);
        let t2 = t.clone();
        let mut net = Scripted::new(move |target, req| {
            if target == "srv1" {
                // srv1 is gone; its successor takes the lease while the client waits.
                t2.owners.lock().unwrap().insert("t/1".into(), ("srv2".into(), 2));
                None
            } else {
                Some(Response::ok(req.id, ""))
            }
        });
        let out = call(&mut net, &TableResolver(t.clone()), &put(), &CallPolicy::default()).unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(net.sleeps, vec![1000]);
        assert_eq!(*t.invalidated.lock().unwrap(), vec!["t/1".to_string()]);
        assert_eq!(net.seen[1].0, "srv2");
        assert_eq!(net.seen[1].1.fence, Some(2));
    }

    #[test]
    fn not_owner_is_retried_after_invalidation() {
        let t = table(&[("t/1", "srv1", 1)]);
        let tries = RefCell::new(0);
        let mut net = Scripted::new(move |_, req| {
            *tries.borrow_mut() += 1;
            if *tries.borrow() < 3 {
                Some(Response::not_owner(req.id))
            } else {
                Some(Response::ok(req.id, ""))
            }
        });
        let out = call(&mut net, &TableResolver(t.clone()), &put(), &CallPolicy::default()).unwrap();
        assert_eq!(out.attempts, 3);
        assert_eq!(net.sleeps, vec![1000, 2000]);
        assert_eq!(t.invalidated.lock().unwrap().len(), 2);
    }

    #[test]
    fn unresolvable_request_fails_immediately() {
        let mut net = Scripted::new(|_, _| panic!("nothing to send to"));
        let err = call(&mut net, &Chain::new(), &put(), &CallPolicy::default()).unwrap_err();
        assert!(matches!(err, CallError::Resolution(ResolveError::ResolutionFailed(_))));
    }

    #[test]
    fn attempts_are_bounded() {
        let t = table(&[("t/1", "srv1", 1)]);
        let mut net = Scripted::new(|_, _| None);
        let policy = CallPolicy {
            max_attempts: 3,
            overall_deadline: SimDuration::from_secs(10_000),
            ..Default::default()
        };
        let err = call(&mut net, &TableResolver(t), &put(), &policy).unwrap_err();
        assert_eq!(err, CallError::Exhausted { attempts: 3 });
        assert_eq!(net.sleeps, vec![1000, 2000]);
    }

    #[test]
    fn overall_deadline_is_bounded() {
        let t = table(&[("t/1", "srv1", 1)]);
        let mut net = Scripted::new(|_, _| None);
        let err = call(&mut net, &TableResolver(t), &put(), &CallPolicy::default()).unwrap_err();
        assert!(matches!(err, CallError::Exhausted { .. }));
        assert!(net.now <= SimTime::ZERO + SimDuration::from_secs(120));
    }

    #[test]
    fn non_lease_attempts_use_backoff_as_budget() {
        let dns = StaticResolver::new(BTreeMap::from([("db".to_string(), "10.0.0.2:99".to_string())]));
        let chain = Chain::new().then(dns);
        let mut net = Scripted::new(|_, _| None);
        let policy = CallPolicy {
            max_attempts: 4,
            ..Default::default()
        };
        let req = Request::new(1, "get").with_name(name("db"));
        call(&mut net, &chain, &req, &policy).unwrap_err();
        assert_eq!(net.budgets, vec![1000, 2000, 4000, 8000]);
        assert!(net.seen.iter().all(|(_, r)| r.fence.is_none()));
    }

    #[test]
    fn keyed_requests_are_offered_to_the_chain() {
        let rewrite = stage_fn(|ctx, next| {
            assert_eq!(ctx.key.as_deref(), Some(&b"k"[..]));
            next.run(&ctx.with_name(name("db")))
        });
        let dns = StaticResolver::new(BTreeMap::from([("db".to_string(), "host".to_string())]));
        let chain = Chain::new().then(rewrite).then(dns);
        let mut net = Scripted::new(|_, req| Some(Response::ok(req.id, "")));
        let req = Request::new(1, "kv.get").with_key("k");
        call(&mut net, &chain, &req, &CallPolicy::default()).unwrap();
        assert_eq!(net.seen[0].1.name, Some(name("db")));
    }
}
