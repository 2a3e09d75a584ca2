//! The deterministic event log of a run and its canonical text form.
//!
//! Each entry renders as one tab-separated line:
//! `<at ms>\t<seq>\t<actor>\t<event>\t<detail>\n`. The digest is FNV-1a
//! (64-bit) over exactly those bytes, so a trace file on disk and the hash
//! printed next to it always agree.

use std::fmt;
use std::str::FromStr;

use super::{SimError, SimTime};

/// What happened. The first seven kinds are the kernel's own; the rest are
/// emitted by the lockservice bookkeeping and the tablet servers so the trace
/// checker can audit ownership and durability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceEvent {
    Send,
    Deliver,
    Drop,
    TimeoutFire,
    LeaseGrant,
    LeaseExpire,
    Fault,
    LeaseRenew,
    LeaseRelease,
    /// A server applied a write to its tablet state; the durable record.
    Apply,
    /// A client considered an operation complete.
    Ack,
}

impl TraceEvent {
    pub const ALL: [TraceEvent; 11] = [
        TraceEvent::Send,
        TraceEvent::Deliver,
        TraceEvent::Drop,
        TraceEvent::TimeoutFire,
        TraceEvent::LeaseGrant,
        TraceEvent::LeaseExpire,
        TraceEvent::Fault,
        TraceEvent::LeaseRenew,
        TraceEvent::LeaseRelease,
        TraceEvent::Apply,
        TraceEvent::Ack,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::Send => "send",
            TraceEvent::Deliver => "deliver",
            TraceEvent::Drop => "drop",
            TraceEvent::TimeoutFire => "timeout-fire",
            TraceEvent::LeaseGrant => "lease-grant",
            TraceEvent::LeaseExpire => "lease-expire",
            TraceEvent::Fault => "fault",
            TraceEvent::LeaseRenew => "lease-renew",
            TraceEvent::LeaseRelease => "lease-release",
            TraceEvent::Apply => "apply",
            TraceEvent::Ack => "ack",
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceEvent {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TraceEvent::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| SimError::Argument(format!("unknown trace event `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub at: SimTime,
    pub seq: u64,
    pub actor: String,
    pub event: TraceEvent,
    pub detail: String,
}

impl TraceEntry {
    /// Looks up `key` in a `k=v k=v` detail string.
    pub fn field(&self, key: &str) -> Option<&str> {
        detail_field(&self.detail, key)
    }

    fn write_line(&self, out: &mut String) {
        use std::fmt::Write;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            self.at.as_millis(),
            self.seq,
            self.actor,
            self.event,
            self.detail
        );
    }
}

/// Looks up `key` in a space-separated `k=v` list.
pub fn detail_field<'a>(detail: &'a str, key: &str) -> Option<&'a str> {
    detail.split(' ').find_map(|tok| {
        let (k, v) = tok.split_once('=')?;
        (k == key).then_some(v)
    })
}

/// Ordered list of entries. Sequence numbers are assigned on push and never reused.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry, assigning the next sequence number.
    ///
    /// Panics if `at` precedes the previous entry; the kernel never does that.
    pub fn push(&mut self, at: SimTime, actor: &str, event: TraceEvent, detail: String) {
        if let Some(last) = self.entries.last() {
            assert!(at >= last.at, "trace time went backwards");
        }
        debug_assert!(!actor.contains(['\t', '\n']) && !detail.contains(['\t', '\n']));
        let seq = self.entries.len() as u64;
        self.entries.push(TraceEntry {
            at,
            seq,
            actor: actor.to_string(),
            event,
            detail,
        });
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter()
    }

    pub fn of_kind(&self, event: TraceEvent) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(move |e| e.event == event)
    }

    /// Canonical text rendering.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 48);
        for e in &self.entries {
            e.write_line(&mut out);
        }
        out
    }

    /// Parses the canonical rendering back into a trace.
    pub fn parse(text: &str) -> Result<Trace, SimError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let mut cols = line.splitn(5, '\t');
            let bad = || SimError::Argument(format!("malformed trace line {}", n + 1));
            let at = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let seq = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let actor = cols.next().ok_or_else(bad)?.to_string();
            let event = cols.next().ok_or_else(bad)?.parse()?;
            let detail = cols.next().ok_or_else(bad)?.to_string();
            entries.push(TraceEntry {
                at: SimTime::from_millis(at),
                seq,
                actor,
                event,
                detail,
            });
        }
        Ok(Trace { entries })
    }
}

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Digest of the canonical rendering.
pub fn trace_hash(trace: &Trace) -> u64 {
    fnv1a64(trace.render().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let mut t = Trace::new();
        t.push(SimTime::from_millis(1000), "client", TraceEvent::Send, "to=srv1 msg=0".into());
        t.push(SimTime::from_millis(1010), "srv1", TraceEvent::Deliver, "from=client msg=0".into());
        t
    }

    #[test]
    fn empty_trace_hashes_to_offset_basis() {
        assert_eq!(trace_hash(&Trace::new()), 0xcbf29ce484222325);
    }

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn render_is_tab_separated() {
        assert_eq!(
            sample().render(),
            "1000\t0\tclient\tsend\tto=srv1 msg=0\n1010\t1\tsrv1\tdeliver\tfrom=client msg=0\n"
        );
    }

    #[test]
    fn parse_inverts_render() {
        let t = sample();
        assert_eq!(Trace::parse(&t.render()).unwrap(), t);
        assert_eq!(trace_hash(&t), trace_hash(&t.clone()));
    }

    #[test]
    fn detail_fields() {
        let t = sample();
        assert_eq!(t.entries()[0].field("to"), Some("srv1"));
        assert_eq!(t.entries()[0].field("nope"), None);
    }

    #[test]
    #[should_panic(expected = "backwards")]
    fn time_cannot_go_backwards() {
        let mut t = sample();
        t.push(SimTime::from_millis(5), "x", TraceEvent::Fault, String::new());
    }
}
