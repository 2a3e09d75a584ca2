//! The lockservice over the RPC wire: `lease.acquire`, `lease.renew`,
//! `lease.release` and `lease.lookup`.
//!
//! The lease name travels in the request's name field and the owner in its
//! key field. `lease.acquire` takes the TTL in milliseconds (decimal) as its
//! value. Replies are tab-separated decimal text; failures are `app-error`
//! with the error code (`held`, `not-owner`, `no-owner`, `invalid-ttl`).

use super::{LeaseError, LeaseName, LeaseRecord, LeaseView, SharedLockService};
use crate::rpc::{Exchange, HandlerResult, Registry, Reject, Request, Scope, Server};
use crate::sim::SimDuration;

pub const ACQUIRE: &str = "lease.acquire";
pub const RENEW: &str = "lease.renew";
pub const RELEASE: &str = "lease.release";
pub const LOOKUP: &str = "lease.lookup";

pub type LockServer = Server<SharedLockService>;

pub fn lock_server(id: impl Into<String>, service: SharedLockService) -> LockServer {
    Server::new(id, service, registry())
}

pub fn registry() -> Registry<SharedLockService> {
    Registry::new()
        .register(ACQUIRE, Scope::Open, acquire)
        .register(RENEW, Scope::Open, renew)
        .register(RELEASE, Scope::Open, release)
        .register(LOOKUP, Scope::Open, lookup)
}

fn reject(e: LeaseError) -> Reject {
    Reject::App(e.code().to_string())
}

fn args(req: &Request) -> Result<(&LeaseName, String), Reject> {
    let name = req.name.as_ref().ok_or("missing lease name")?;
    let owner = String::from_utf8(req.key.clone()).map_err(|_| "owner is not utf-8")?;
    Ok((name, owner))
}

fn record_reply(r: &LeaseRecord) -> Vec<u8> {
    format!("{}\t{}", r.epoch, r.expiry().as_millis()).into_bytes()
}

fn acquire(ex: &mut Exchange<'_, SharedLockService>, req: &Request) -> HandlerResult {
    let (name, owner) = args(req)?;
    let ttl_ms: u64 = std::str::from_utf8(&req.value)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or("ttl must be decimal milliseconds")?;
    let record = ex
        .state
        .lock()
        .acquire(name, &owner, SimDuration::from_millis(ttl_ms))
        .map_err(reject)?;
    Ok(record_reply(&record))
}

fn renew(ex: &mut Exchange<'_, SharedLockService>, req: &Request) -> HandlerResult {
    let (name, owner) = args(req)?;
    let record = ex.state.lock().renew(name, &owner).map_err(reject)?;
    Ok(record_reply(&record))
}

fn release(ex: &mut Exchange<'_, SharedLockService>, req: &Request) -> HandlerResult {
    let (name, owner) = args(req)?;
    ex.state.lock().release(name, &owner).map_err(reject)?;
    Ok(Vec::new())
}

fn lookup(ex: &mut Exchange<'_, SharedLockService>, req: &Request) -> HandlerResult {
    let name = req.name.as_ref().ok_or("missing lease name")?;
    let view = ex.state.lock().lookup(name).map_err(reject)?;
    Ok(encode_view(&view))
}

pub fn encode_view(view: &LeaseView) -> Vec<u8> {
    format!("{}\t{}\t{}", view.owner, view.remaining.as_millis(), view.epoch).into_bytes()
}

pub fn decode_view(bytes: &[u8]) -> Option<LeaseView> {
    let text = std::str::from_utf8(bytes).ok()?;
    let mut cols = text.split('\t');
    let owner = cols.next()?.to_string();
    let remaining = SimDuration::from_millis(cols.next()?.parse().ok()?);
    let epoch = cols.next()?.parse().ok()?;
    cols.next().is_none().then_some(LeaseView {
        owner,
        remaining,
        epoch,
    })
}
