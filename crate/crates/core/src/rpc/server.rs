//! Server-side dispatch with lease fencing.
//!
//! Methods registered as lease-scoped only run if the server believes it
//! holds the unexpired lease named in the request at an epoch at least as new
//! as the client's fencing token. Anything else gets `not-owner` and the
//! handler is never invoked.

use std::collections::BTreeMap;

use super::codec::{decode_request, CodecError, Request, Response};
use crate::lockservice::{LeaseName, LeaseRecord};
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeldLease {
    pub epoch: u64,
    pub expiry: SimTime,
}

/// The leases a server believes it holds, as granted to it by the lockservice.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LeaseTable {
    held: BTreeMap<LeaseName, HeldLease>,
}

impl LeaseTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, record: &LeaseRecord) {
        self.held.insert(
            record.name.clone(),
            HeldLease {
                epoch: record.epoch,
                expiry: record.expiry(),
            },
        );
    }

    pub fn forget(&mut self, name: &LeaseName) -> Option<HeldLease> {
        self.held.remove(name)
    }

    pub fn clear(&mut self) {
        self.held.clear();
    }

    pub fn get(&self, name: &LeaseName) -> Option<HeldLease> {
        self.held.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &LeaseName> {
        self.held.keys()
    }

    pub fn len(&self) -> usize {
        self.held.len()
    }

    pub fn is_empty(&self) -> bool {
        self.held.is_empty()
    }

    /// Fencing check: held, unexpired at `now`, and epoch >= the client's token.
    pub fn admits(&self, name: &LeaseName, now: SimTime, fence: Option<u64>) -> bool {
        match self.held.get(name) {
            Some(h) => now < h.expiry && fence.is_none_or(|f| h.epoch >= f),
            None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Requires a held lease named by the request.
    Lease,
    /// Runs unconditionally.
    Open,
}

/// What a handler gets to touch.
pub struct Exchange<'a, S> {
    pub server_id: &'a str,
    pub now: SimTime,
    pub state: &'a mut S,
    pub leases: &'a mut LeaseTable,
}

/// Handler failure, mapped onto the response status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reject {
    App(String),
    /// The request reached this server under a routing it cannot honour.
    NotOwner,
}

impl From<String> for Reject {
    fn from(message: String) -> Self {
        Reject::App(message)
    }
}

impl From<&str> for Reject {
    fn from(message: &str) -> Self {
        Reject::App(message.to_string())
    }
}

/// `Ok(value)` becomes an `ok` response.
pub type HandlerResult = Result<Vec<u8>, Reject>;

type HandlerFn<S> = Box<dyn Fn(&mut Exchange<'_, S>, &Request) -> HandlerResult + Send + Sync>;

pub struct Registry<S> {
    handlers: BTreeMap<String, (Scope, HandlerFn<S>)>,
}

impl<S> Default for Registry<S> {
    fn default() -> Self {
        Self {
            handlers: BTreeMap::new(),
        }
    }
}

impl<S> Registry<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(mut self, method: &str, scope: Scope, handler: F) -> Self
    where
        F: Fn(&mut Exchange<'_, S>, &Request) -> HandlerResult + Send + Sync + 'static,
    {
        self.handlers.insert(method.to_string(), (scope, Box::new(handler)));
        self
    }

    pub fn scope_of(&self, method: &str) -> Option<Scope> {
        self.handlers.get(method).map(|(s, _)| *s)
    }

    pub fn methods(&self) -> impl Iterator<Item = &str> {
        self.handlers.keys().map(String::as_str)
    }
}

pub const NO_SUCH_METHOD: &str = "no-such-method";

pub struct Server<S> {
    id: String,
    state: S,
    leases: LeaseTable,
    registry: Registry<S>,
}

impl<S: std::fmt::Debug> std::fmt::Debug for Server<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Server")
            .field("id", &self.id)
            .field("state", &self.state)
            .field("leases", &self.leases)
            .finish()
    }
}

impl<S> Server<S> {
    pub fn new(id: impl Into<String>, state: S, registry: Registry<S>) -> Self {
        Self {
            id: id.into(),
            state,
            leases: LeaseTable::new(),
            registry,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut S {
        &mut self.state
    }

    pub fn leases(&self) -> &LeaseTable {
        &self.leases
    }

    pub fn leases_mut(&mut self) -> &mut LeaseTable {
        &mut self.leases
    }

    /// Both halves at once, for callers that update state and leases together.
    pub fn parts_mut(&mut self) -> (&mut S, &mut LeaseTable) {
        (&mut self.state, &mut self.leases)
    }

    pub fn handle(&mut self, now: SimTime, req: &Request) -> Response {
        let Some((scope, handler)) = self.registry.handlers.get(&req.method) else {
            return Response::app_error(req.id, NO_SUCH_METHOD);
        };
        if *scope == Scope::Lease {
            let admitted = req
                .name
                .as_ref()
                .is_some_and(|name| self.leases.admits(name, now, req.fence));
            if !admitted {
                return Response::not_owner(req.id);
            }
        }
        let mut exchange = Exchange {
            server_id: &self.id,
            now,
            state: &mut self.state,
            leases: &mut self.leases,
        };
        match handler(&mut exchange, req) {
            Ok(value) => Response::ok(req.id, value),
            Err(Reject::App(message)) => Response::app_error(req.id, message),
            Err(Reject::NotOwner) => Response::not_owner(req.id),
        }
    }

    /// Decodes a request frame, handles it, and encodes the reply.
    pub fn dispatch(&mut self, now: SimTime, frame: &[u8]) -> Result<Vec<u8>, CodecError> {
        let req = decode_request(frame)?;
        let resp = self.handle(now, &req);
        resp.encode().or_else(|_| Response::app_error(req.id, "response too large").encode())
    }
}
