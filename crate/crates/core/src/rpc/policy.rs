use crate::sim::SimDuration;

pub const INITIAL_BACKOFF: SimDuration = SimDuration::from_secs(1);
pub const BACKOFF_CAP: SimDuration = SimDuration::from_secs(60);

/// Doubles `current`, capped at 60 s.
pub fn next_backoff(current: SimDuration) -> SimDuration {
    current.saturating_mul(2).min(BACKOFF_CAP)
}

/// Bounds on a single logical call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallPolicy {
    pub max_attempts: u32,
    pub overall_deadline: SimDuration,
    pub initial_backoff: SimDuration,
    pub backoff_factor: u64,
    pub backoff_cap: SimDuration,
}

impl Default for CallPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 16,
            overall_deadline: SimDuration::from_secs(120),
            initial_backoff: INITIAL_BACKOFF,
            backoff_factor: 2,
            backoff_cap: BACKOFF_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid call policy: {0}")]
pub struct InvalidPolicy(&'static str);

impl CallPolicy {
    pub fn validate(&self) -> Result<(), InvalidPolicy> {
        if self.max_attempts == 0 {
            return Err(InvalidPolicy("max_attempts must be at least 1"));
        }
        if self.initial_backoff.is_zero() {
            return Err(InvalidPolicy("initial backoff must be positive"));
        }
        if self.backoff_cap < self.initial_backoff {
            return Err(InvalidPolicy("backoff cap below initial backoff"));
        }
        Ok(())
    }

    pub fn next_backoff(&self, current: SimDuration) -> SimDuration {
        current.saturating_mul(self.backoff_factor).min(self.backoff_cap)
    }

    /// Backoff values in order, starting from the initial one.
    pub fn backoffs(&self) -> impl Iterator<Item = SimDuration> + '_ {
        std::iter::successors(Some(self.initial_backoff), move |b| Some(self.next_backoff(*b)))
    }
}
