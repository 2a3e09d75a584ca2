//! Event scheduler and logical clock.

use std::collections::{BTreeMap, BTreeSet};

use super::fault::FaultSpec;
use super::time::{Clock, SimClock, SimDuration, SimTime};
use super::trace::{Trace, TraceEvent};
use super::SimError;

/// Handle for a scheduled event. Ordering matches firing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId {
    at: SimTime,
    seq: u64,
}

impl EventId {
    pub fn at(&self) -> SimTime {
        self.at
    }
}

/// Discrete-event kernel over an event payload type `E`.
///
/// Events with equal timestamps fire in the order they were scheduled.
#[derive(Debug)]
pub struct Kernel<E> {
    clock: SimClock,
    queue: BTreeMap<EventId, E>,
    next_seq: u64,
    trace: Trace,
    entities: BTreeSet<String>,
    processed: u64,
}

impl<E> Default for Kernel<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Kernel<E> {
    pub fn new() -> Self {
        Self {
            clock: SimClock::new(),
            queue: BTreeMap::new(),
            next_seq: 0,
            trace: Trace::new(),
            entities: BTreeSet::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    /// A clock handle that follows this kernel.
    pub fn clock(&self) -> SimClock {
        self.clock.clone()
    }

    pub fn schedule(&mut self, delay: SimDuration, event: E) -> EventId {
        let at = self.now() + delay;
        self.insert(at, event)
    }

    /// Schedules at an absolute time; times in the past are rejected.
    pub fn schedule_at(&mut self, at: SimTime, event: E) -> Result<EventId, SimError> {
        if at < self.now() {
            return Err(SimError::Argument(format!(
                "cannot schedule at {at}, clock is already at {}",
                self.now()
            )));
        }
        Ok(self.insert(at, event))
    }

    /// Schedules with a delay given in (possibly negative) seconds.
    pub fn schedule_secs(&mut self, delay_secs: f64, event: E) -> Result<EventId, SimError> {
        let delay = SimDuration::from_secs_f64(delay_secs)?;
        Ok(self.schedule(delay, event))
    }

    fn insert(&mut self, at: SimTime, event: E) -> EventId {
        let id = EventId {
            at,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.queue.insert(id, event);
        id
    }

    /// Returns the payload if the event had not fired yet.
    pub fn cancel(&mut self, id: EventId) -> Option<E> {
        self.queue.remove(&id)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.keys().next().map(|id| id.at)
    }

    /// Pops the next event due at or before `horizon`, advancing the clock to it.
    pub fn next_event(&mut self, horizon: SimTime) -> Option<(EventId, E)> {
        let (&id, _) = self.queue.iter().next()?;
        if id.at > horizon {
            return None;
        }
        let event = self.queue.remove(&id).expect("key just observed");
        self.clock.set(id.at);
        self.processed += 1;
        Some((id, event))
    }

    /// Moves the clock forward to `t` without firing anything. No-op if `t` is in the past.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now() {
            self.clock.set(t);
        }
    }

    /// Fires every event due at or before `horizon`, then parks the clock at `horizon`.
    pub fn run_until<F>(&mut self, horizon: SimTime, mut handler: F) -> &Trace
    where
        F: FnMut(&mut Kernel<E>, E),
    {
        while let Some((_, event)) = self.next_event(horizon) {
            handler(self, event);
        }
        self.advance_to(horizon);
        &self.trace
    }

    /// Appends a trace entry stamped with the current time.
    pub fn record(&mut self, actor: &str, event: TraceEvent, detail: impl Into<String>) {
        let now = self.now();
        self.trace.push(now, actor, event, detail.into());
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    /// Number of events fired so far.
    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    /// Registers an entity id that faults may target.
    pub fn declare_entity(&mut self, id: impl Into<String>) {
        self.entities.insert(id.into());
    }

    pub fn has_entity(&self, id: &str) -> bool {
        self.entities.contains(id)
    }

    /// Schedules a fault to fire at `spec.at`. The event handler applies it.
    pub fn inject_fault(&mut self, spec: FaultSpec) -> Result<EventId, SimError>
    where
        E: From<FaultSpec>,
    {
        if !self.has_entity(&spec.target) {
            return Err(SimError::Scenario(format!(
                "fault targets undeclared entity `{}`",
                spec.target
            )));
        }
        let at = spec.at;
        self.schedule_at(at, E::from(spec))
    }
}
