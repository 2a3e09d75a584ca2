//! Wire codec, fenced server dispatch and the client call loop.

mod call;
pub mod codec;
mod policy;
mod server;
pub mod tcp;

pub use call::{
    call, call_observed, resolve_context, CallError, CallObserver, CallOutcome, RetryReason, Transport,
    TransportError,
};
pub use codec::{decode_frame, encode_frame, CodecError, Message, Request, Response, Status};
pub use policy::{next_backoff, CallPolicy, InvalidPolicy, BACKOFF_CAP, INITIAL_BACKOFF};
pub use server::{Exchange, HandlerResult, HeldLease, LeaseTable, Registry, Reject, Scope, Server, NO_SUCH_METHOD};
