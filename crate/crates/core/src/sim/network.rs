//! Simulated point-to-point links with crash and partition faults.

use std::collections::{BTreeMap, BTreeSet};

use super::kernel::Kernel;
use super::time::SimDuration;
use super::trace::TraceEvent;

/// Default one-way latency per hop.
pub const DEFAULT_LATENCY: SimDuration = SimDuration::from_millis(10);

/// A message in flight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope<P> {
    pub msg: u64,
    pub from: String,
    pub to: String,
    pub payload: P,
    /// Receiver incarnation at send time; a restart in between loses the message.
    incarnation: u64,
}

#[derive(Debug, Clone)]
pub struct SimNetwork {
    latency: SimDuration,
    next_msg: u64,
    crashed: BTreeSet<String>,
    incarnations: BTreeMap<String, u64>,
    cut_links: BTreeSet<(String, String)>,
}

impl Default for SimNetwork {
    fn default() -> Self {
        Self::new(DEFAULT_LATENCY)
    }
}

fn link_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl SimNetwork {
    pub fn new(latency: SimDuration) -> Self {
        Self {
            latency,
            next_msg: 0,
            crashed: BTreeSet::new(),
            incarnations: BTreeMap::new(),
            cut_links: BTreeSet::new(),
        }
    }

    pub fn latency(&self) -> SimDuration {
        self.latency
    }

    pub fn is_crashed(&self, node: &str) -> bool {
        self.crashed.contains(node)
    }

    pub fn is_link_cut(&self, a: &str, b: &str) -> bool {
        self.cut_links.contains(&link_key(a, b))
    }

    pub fn crash(&mut self, node: &str) {
        self.crashed.insert(node.to_string());
        *self.incarnations.entry(node.to_string()).or_insert(0) += 1;
    }

    pub fn restart(&mut self, node: &str) {
        self.crashed.remove(node);
    }

    pub fn cut_link(&mut self, a: &str, b: &str) {
        self.cut_links.insert(link_key(a, b));
    }

    pub fn heal_link(&mut self, a: &str, b: &str) {
        self.cut_links.remove(&link_key(a, b));
    }

    fn incarnation(&self, node: &str) -> u64 {
        self.incarnations.get(node).copied().unwrap_or(0)
    }

    /// Puts a message on the wire; it arrives one latency later unless a
    /// fault intervenes. Returns the message id.
    pub fn send<P, E>(
        &mut self,
        kernel: &mut Kernel<E>,
        from: &str,
        to: &str,
        payload: P,
        label: &str,
    ) -> u64
    where
        E: From<Envelope<P>>,
    {
        let msg = self.next_msg;
        self.next_msg += 1;
        kernel.record(from, TraceEvent::Send, format!("msg={msg} to={to} {label}"));
        if self.is_crashed(from) || self.is_link_cut(from, to) {
            kernel.record(to, TraceEvent::Drop, format!("msg={msg} from={from} reason=send"));
            return msg;
        }
        let envelope = Envelope {
            msg,
            from: from.to_string(),
            to: to.to_string(),
            payload,
            incarnation: self.incarnation(to),
        };
        kernel.schedule(self.latency, E::from(envelope));
        msg
    }

    /// Called when an envelope's delivery event fires. Records `deliver` or
    /// `drop` and says whether the receiver should process it.
    pub fn accept<P, E>(&self, kernel: &mut Kernel<E>, envelope: &Envelope<P>) -> bool {
        let reason = if self.is_crashed(&envelope.to) {
            Some("crashed")
        } else if self.incarnation(&envelope.to) != envelope.incarnation {
            Some("restarted")
        } else if self.is_link_cut(&envelope.from, &envelope.to) {
            Some("link")
        } else {
            None
        };
        match reason {
            Some(reason) => {
                kernel.record(
                    &envelope.to,
                    TraceEvent::Drop,
                    format!("msg={} from={} reason={reason}", envelope.msg, envelope.from),
                );
                false
            }
            None => {
                kernel.record(
                    &envelope.to,
                    TraceEvent::Deliver,
                    format!("msg={} from={}", envelope.msg, envelope.from),
                );
                true
            }
        }
    }
}
