//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! seed 7
//! server srv1
//! standby sb1
//! tablet T0 "" m
//! tablet T1 m inf
//! lease_ttl 10
//! latency 0.01
//! fault crash srv1 at=5.0
//! fault split T0 at=2.095 arg=g
//! workload ops=400 keys=a..z mix=put:0.9,get:0.1 think=20
//! client library
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::sim::{FaultKind, FaultSpec, SimDuration, SimTime, DEFAULT_LATENCY};
use crate::tabletkv::{EndKey, TabletDescriptor, TabletMap};

pub const DEFAULT_LEASE_TTL: SimDuration = SimDuration::from_secs(10);

/// Fault endpoint standing for the workload client on link faults.
pub const CLIENT: &str = "client";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("parse-error({line}, {message})")]
    Parse { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClientMode {
    /// Look up once, send once, never check the reply.
    Naive,
    #[default]
    Library,
}

impl ClientMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClientMode::Naive => "naive",
            ClientMode::Library => "library",
        }
    }
}

impl fmt::Display for ClientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClientMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(ClientMode::Naive),
            "library" => Ok(ClientMode::Library),
            other => Err(format!("unknown client mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub ops: u64,
    /// Single-byte keys drawn uniformly from this alphabet.
    pub keys: Vec<u8>,
    pub put_fraction: f64,
    /// Upper bound of the uniform pause before each op.
    pub think: SimDuration,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            ops: 100,
            keys: (b'a'..=b'z').collect(),
            put_fraction: 1.0,
            think: SimDuration::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub servers: Vec<String>,
    pub standbys: Vec<String>,
    pub tablets: TabletMap,
    pub lease_ttl: SimDuration,
    pub latency: SimDuration,
    pub faults: Vec<FaultSpec>,
    pub workload: Workload,
    pub client_mode: ClientMode,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Self::parse_with_default_ttl(text, DEFAULT_LEASE_TTL)
    }

    /// Like [`parse`](Self::parse), with `ttl` used when no `lease_ttl` line is present.
    pub fn parse_with_default_ttl(text: &str, ttl: SimDuration) -> Result<Self, ScenarioError> {
        Parser::new(ttl).run(text)
    }

    /// Tablet assignment at start-up: round-robin over servers in map order.
    pub fn initial_owner(&self, tablet_index: usize) -> &str {
        &self.servers[tablet_index % self.servers.len()]
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_client_mode(mut self, mode: ClientMode) -> Self {
        self.client_mode = mode;
        self
    }
}

struct Parser {
    seed: Option<u64>,
    servers: Vec<String>,
    standbys: Vec<String>,
    tablets: Vec<(usize, TabletDescriptor)>,
    lease_ttl: SimDuration,
    latency: SimDuration,
    faults: Vec<(usize, FaultSpec)>,
    workload: Workload,
    client_mode: ClientMode,
}

impl Parser {
    fn new(ttl: SimDuration) -> Self {
        Self {
            seed: None,
            servers: Vec::new(),
            standbys: Vec::new(),
            tablets: Vec::new(),
            lease_ttl: ttl,
            latency: DEFAULT_LATENCY,
            faults: Vec::new(),
            workload: Workload::default(),
            client_mode: ClientMode::default(),
        }
    }

    fn run(mut self, text: &str) -> Result<Scenario, ScenarioError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            self.directive(line, &words)?;
        }
        self.finish()
    }

    fn directive(&mut self, line: usize, words: &[&str]) -> Result<(), ScenarioError> {
        let args = &words[1..];
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(parse_err(line, format!("`{}` takes {n} argument(s)", words[0])))
            }
        };
        match words[0] {
            "seed" => {
                arity(1)?;
                self.seed = Some(args[0].parse().map_err(|_| parse_err(line, "seed must be an unsigned integer"))?);
            }
            "server" | "standby" => {
                arity(1)?;
                let id = args[0];
                if self.servers.iter().chain(&self.standbys).any(|s| s == id) {
                    return Err(parse_err(line, format!("duplicate server id `{id}`")));
                }
                if id == CLIENT || id == "admin" || id == "lockservice" {
                    return Err(parse_err(line, format!("`{id}` is reserved")));
                }
                if words[0] == "server" {
                    self.servers.push(id.to_string());
                } else {
                    self.standbys.push(id.to_string());
                }
            }
            "tablet" => {
                arity(3)?;
                let id = args[0];
                if self.tablets.iter().any(|(_, t)| t.id == id) {
                    return Err(parse_err(line, format!("duplicate tablet id `{id}`")));
                }
                let start = unquote(args[1]);
                let end = match args[2] {
                    "inf" => EndKey::Infinity,
                    k => EndKey::Key(unquote(k).into_bytes()),
                };
                self.tablets.push((line, TabletDescriptor::new(id, start.into_bytes(), end)));
            }
            "lease_ttl" => {
                arity(1)?;
                self.lease_ttl = seconds(line, args[0])?;
                if self.lease_ttl.is_zero() {
                    return Err(parse_err(line, "lease_ttl must be positive"));
                }
            }
            "latency" => {
                arity(1)?;
                self.latency = seconds(line, args[0])?;
            }
            "fault" => self.fault(line, args)?,
            "workload" => self.workload(line, args)?,
            "client" => {
                arity(1)?;
                self.client_mode = args[0].parse().map_err(|e: String| parse_err(line, e))?;
            }
            other => return Err(parse_err(line, format!("unknown directive `{other}`"))),
        }
        Ok(())
    }

    fn fault(&mut self, line: usize, args: &[&str]) -> Result<(), ScenarioError> {
        if args.len() < 3 || args.len() > 4 {
            return Err(parse_err(line, "usage: fault KIND TARGET at=T [arg=V]"));
        }
        let kind: FaultKind = args[0].parse().map_err(|e: crate::sim::SimError| parse_err(line, e.to_string()))?;
        let mut at = None;
        let mut arg = None;
        for kv in &args[2..] {
            match kv.split_once('=') {
                Some(("at", v)) => {
                    let secs: f64 = v.parse().map_err(|_| parse_err(line, format!("bad time `{v}`")))?;
                    at = Some(SimTime::from_secs_f64(secs).map_err(|e| parse_err(line, e.to_string()))?);
                }
                Some(("arg", v)) => arg = Some(unquote(v)),
                _ => return Err(parse_err(line, format!("unexpected `{kv}`"))),
            }
        }
        let at = at.ok_or_else(|| parse_err(line, "fault needs at=T"))?;
        let mut spec = FaultSpec::new(at, kind, args[1]);
        if let Some(arg) = arg {
            spec = spec.with_arg(arg);
        }
        if kind == FaultKind::SplitTablet && spec.arg.as_deref().is_none_or(str::is_empty) {
            return Err(parse_err(line, "split needs a nonempty arg=KEY"));
        }
        self.faults.push((line, spec));
        Ok(())
    }

    fn workload(&mut self, line: usize, args: &[&str]) -> Result<(), ScenarioError> {
        for kv in args {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| parse_err(line, format!("expected key=value, got `{kv}`")))?;
            match k {
                "ops" => self.workload.ops = v.parse().map_err(|_| parse_err(line, "ops must be an unsigned integer"))?,
                "keys" => self.workload.keys = key_range(v).ok_or_else(|| parse_err(line, "keys must look like a..z"))?,
                "mix" => self.workload.put_fraction = mix(line, v)?,
                "think" => {
                    let ms: u64 = v.parse().map_err(|_| parse_err(line, "think is whole milliseconds"))?;
                    self.workload.think = SimDuration::from_millis(ms);
                }
                other => return Err(parse_err(line, format!("unknown workload field `{other}`"))),
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<Scenario, ScenarioError> {
        let seed = self.seed.unwrap_or(0);
        if self.servers.is_empty() {
            return Err(ScenarioError::Invalid("at least one server is required".into()));
        }
        let tablets = if self.tablets.is_empty() {
            TabletMap::single("T0").expect("valid id")
        } else {
            let line = self.tablets[0].0;
            TabletMap::new(self.tablets.into_iter().map(|(_, t)| t).collect())
                .map_err(|e| parse_err(line, e.to_string()))?
        };
        let hosts: BTreeSet<&str> = self.servers.iter().chain(&self.standbys).map(String::as_str).collect();
        let ids: Vec<&str> = tablets.tablets().iter().map(|t| t.id.as_str()).collect();
        for (line, f) in &self.faults {
            let ok = match f.kind {
                FaultKind::CrashServer | FaultKind::RestartServer => hosts.contains(f.target.as_str()),
                FaultKind::DropLink | FaultKind::HealLink => {
                    let other = f.arg.as_deref().unwrap_or(CLIENT);
                    let known = |e: &str| e == CLIENT || hosts.contains(e);
                    known(&f.target) && known(other)
                }
                // Children of a scripted split may themselves be split later.
                FaultKind::SplitTablet => ids.iter().any(|id| {
                    f.target
                        .strip_prefix(id)
                        .is_some_and(|rest| rest.bytes().all(|b| b == b'a' || b == b'b'))
                }),
            };
            if !ok {
                return Err(parse_err(*line, format!("fault targets undeclared entity `{}`", f.target)));
            }
        }
        Ok(Scenario {
            seed,
            servers: self.servers,
            standbys: self.standbys,
            tablets,
            lease_ttl: self.lease_ttl,
            latency: self.latency,
            faults: self.faults.into_iter().map(|(_, f)| f).collect(),
            workload: self.workload,
            client_mode: self.client_mode,
        })
    }
}

fn unquote(s: &str) -> String {
    s.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(s)
        .to_string()
}

fn seconds(line: usize, v: &str) -> Result<SimDuration, ScenarioError> {
    let secs: f64 = v.parse().map_err(|_| parse_err(line, format!("bad duration `{v}`")))?;
    SimDuration::from_secs_f64(secs).map_err(|e| parse_err(line, e.to_string()))
}

fn key_range(v: &str) -> Option<Vec<u8>> {
    let (lo, hi) = v.split_once("..")?;
    let (&[lo], &[hi]) = (lo.as_bytes(), hi.as_bytes()) else {
        return None;
    };
    (lo <= hi).then(|| (lo..=hi).collect())
}

fn mix(line: usize, v: &str) -> Result<f64, ScenarioError> {
    let (mut put, mut get) = (0.0, 0.0);
    for part in v.split(',') {
        let (op, frac) = part
            .split_once(':')
            .ok_or_else(|| parse_err(line, format!("bad mix entry `{part}`")))?;
        let frac: f64 = frac
            .parse()
            .ok()
            .filter(|f: &f64| (0.0..=1.0).contains(f))
            .ok_or_else(|| parse_err(line, format!("bad fraction in `{part}`")))?;
        match op {
            "put" => put += frac,
            "get" => get += frac,
            other => return Err(parse_err(line, format!("unknown op `{other}` in mix"))),
        }
    }
    if ((put + get) - 1.0f64).abs() > 1e-9 {
        return Err(parse_err(line, "mix fractions must sum to 1"));
    }
    Ok(put)
}
