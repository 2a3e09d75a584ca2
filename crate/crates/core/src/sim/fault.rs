use std::fmt;
use std::str::FromStr;

use super::{SimError, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultKind {
    CrashServer,
    RestartServer,
    DropLink,
    HealLink,
    SplitTablet,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::CrashServer => "crash-server",
            FaultKind::RestartServer => "restart-server",
            FaultKind::DropLink => "drop-link",
            FaultKind::HealLink => "heal-link",
            FaultKind::SplitTablet => "split-tablet",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultKind {
    type Err = SimError;

    /// Accepts the canonical names and the short scenario-file forms
    /// (`crash`, `restart`, `split`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "crash" | "crash-server" => FaultKind::CrashServer,
            "restart" | "restart-server" => FaultKind::RestartServer,
            "drop-link" => FaultKind::DropLink,
            "heal-link" => FaultKind::HealLink,
            "split" | "split-tablet" => FaultKind::SplitTablet,
            other => return Err(SimError::Scenario(format!("unknown fault kind `{other}`"))),
        })
    }
}

/// A scheduled fault.
///
/// For link faults `target` is one endpoint and `arg` the other (the client
/// when absent). For splits `target` is the tablet id and `arg` the split key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultSpec {
    pub at: SimTime,
    pub kind: FaultKind,
    pub target: String,
    pub arg: Option<String>,
}

impl FaultSpec {
    pub fn new(at: SimTime, kind: FaultKind, target: impl Into<String>) -> Self {
        Self {
            at,
            kind,
            target: target.into(),
            arg: None,
        }
    }

    pub fn with_arg(mut self, arg: impl Into<String>) -> Self {
        self.arg = Some(arg.into());
        self
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kind={} target={}", self.kind, self.target)?;
        if let Some(arg) = &self.arg {
            write!(f, " arg={arg}")?;
        }
        Ok(())
    }
}
