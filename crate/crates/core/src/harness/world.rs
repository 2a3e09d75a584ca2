//! The simulated deployment: lockservice, tablet servers, network and faults,
//! all stepped by one kernel. The client drives it through [`Transport`],
//! which runs events until the awaited reply or timer fires.

use std::collections::BTreeMap;

use crate::lockservice::{LeaseEvent, LeaseEventKind, LeaseName, LockService, SharedLockService};
use crate::rpc::codec::decode_request;
use crate::rpc::{Request, Transport, TransportError};
use crate::sim::{Envelope, FaultKind, FaultSpec, Kernel, SimClock, SimDuration, SimNetwork, SimTime, Trace, TraceEvent};
use crate::tabletkv::{tablet_id_of, tablet_lease_name, tablet_server, SharedTabletMap, TabletServer, SPLIT};

use super::scenario::{Scenario, CLIENT};

pub const ADMIN: &str = "admin";
pub const LOCKSERVICE: &str = "lockservice";

const NEVER: SimTime = SimTime::from_millis(u64::MAX);

/// A frame on the simulated wire, tagged so late replies can be told apart.
#[derive(Debug, Clone)]
pub struct Packet {
    pub corr: u64,
    pub frame: Vec<u8>,
}

#[derive(Debug)]
pub enum Event {
    Deliver(Envelope<Packet>),
    Fault(FaultSpec),
    /// Every live server renews what it holds, then the tick re-arms.
    RenewTick,
    /// A crashed owner's lease has lapsed; the standby pool races for it.
    Takeover(LeaseName),
    Timer(u64),
}

impl From<Envelope<Packet>> for Event {
    fn from(e: Envelope<Packet>) -> Self {
        Event::Deliver(e)
    }
}

impl From<FaultSpec> for Event {
    fn from(f: FaultSpec) -> Self {
        Event::Fault(f)
    }
}

pub struct World {
    kernel: Kernel<Event>,
    net: SimNetwork,
    lock: SharedLockService,
    map: SharedTabletMap,
    servers: BTreeMap<String, TabletServer>,
    /// Candidates for orphaned leases, in priority order.
    pool: Vec<String>,
    ttl: SimDuration,
    next_corr: u64,
    next_admin_id: u64,
    waiting: Option<u64>,
    reply: Option<Vec<u8>>,
    timed_out: bool,
}

impl World {
    pub fn new(s: &Scenario) -> Self {
        let mut kernel = Kernel::new();
        let clock = kernel.clock();
        let lock = LockService::new(std::sync::Arc::new(clock)).into_shared();
        let map = SharedTabletMap::new(s.tablets.clone());

        let mut servers = BTreeMap::new();
        for id in s.servers.iter().chain(&s.standbys) {
            kernel.declare_entity(id.clone());
            servers.insert(id.clone(), tablet_server(id.clone(), map.clone(), lock.clone(), s.lease_ttl));
        }
        kernel.declare_entity(CLIENT);
        for t in s.tablets.tablets() {
            kernel.declare_entity(t.id.clone());
        }

        let mut world = Self {
            kernel,
            net: SimNetwork::new(s.latency),
            lock,
            map,
            servers,
            pool: s.standbys.clone(),
            ttl: s.lease_ttl,
            next_corr: 0,
            next_admin_id: 0,
            waiting: None,
            reply: None,
            timed_out: false,
        };

        for (i, t) in s.tablets.tablets().iter().enumerate() {
            let owner = s.initial_owner(i);
            let record = world
                .lock
                .lock()
                .acquire(&t.lease_name(), owner, s.lease_ttl)
                .expect("fresh lockservice grants every initial tablet");
            world.servers.get_mut(owner).expect("declared").leases_mut().record(&record);
        }
        world.flush();

        // Faults go in first so a fault and a tick at the same instant see the fault first.
        for f in &s.faults {
            if f.kind == FaultKind::SplitTablet && !world.kernel.has_entity(&f.target) {
                world.kernel.declare_entity(f.target.clone());
            }
            world.kernel.inject_fault(f.clone()).expect("validated when parsed");
        }
        world.kernel.schedule(world.renew_period(), Event::RenewTick);
        world
    }

    fn renew_period(&self) -> SimDuration {
        SimDuration::from_millis((self.ttl.as_millis() / 2).max(1))
    }

    pub fn lockservice(&self) -> &SharedLockService {
        &self.lock
    }

    pub fn tablet_map(&self) -> &SharedTabletMap {
        &self.map
    }

    pub fn clock(&self) -> SimClock {
        self.kernel.clock()
    }

    pub fn trace(&self) -> &Trace {
        self.kernel.trace()
    }

    pub fn into_trace(mut self) -> Trace {
        self.flush();
        self.kernel.into_trace()
    }

    pub fn events_processed(&self) -> u64 {
        self.kernel.events_processed()
    }

    pub fn server(&self, id: &str) -> Option<&TabletServer> {
        self.servers.get(id)
    }

    pub fn record(&mut self, actor: &str, event: TraceEvent, detail: impl Into<String>) {
        self.flush();
        self.kernel.record(actor, event, detail);
    }

    /// What the current owner of `key`'s tablet holds for it, if anyone owns it.
    pub fn read_owned(&self, key: &[u8]) -> Option<(String, Option<Vec<u8>>)> {
        let tablet = self.map.lock().tablet_for_key(key).clone();
        let owner = self.lock.lock().peek(&tablet.lease_name())?.owner.clone();
        let server = self.servers.get(&owner)?;
        Some((tablet.id.clone(), server.state().value(&tablet.id, key).map(<[u8]>::to_vec)))
    }

    /// Copies lockservice state changes into the trace.
    pub fn flush(&mut self) {
        let events = self.lock.lock().drain_journal();
        for LeaseEvent { kind, record, .. } in events {
            let event = match kind {
                LeaseEventKind::Grant => TraceEvent::LeaseGrant,
                LeaseEventKind::Renew => TraceEvent::LeaseRenew,
                LeaseEventKind::Release => TraceEvent::LeaseRelease,
                LeaseEventKind::Expire => TraceEvent::LeaseExpire,
            };
            self.kernel.record(
                LOCKSERVICE,
                event,
                format!(
                    "name={} owner={} epoch={} expiry_ms={}",
                    record.name,
                    record.owner,
                    record.epoch,
                    record.expiry().as_millis()
                ),
            );
        }
    }

    fn step(&mut self, horizon: SimTime) -> bool {
        let Some((_, event)) = self.kernel.next_event(horizon) else {
            return false;
        };
        match event {
            Event::Deliver(env) => self.deliver(env),
            Event::Fault(spec) => self.fault(spec),
            Event::RenewTick => self.renew_all(),
            Event::Takeover(name) => self.takeover(&name),
            Event::Timer(corr) => {
                if self.waiting == Some(corr) {
                    self.kernel.record(CLIENT, TraceEvent::TimeoutFire, format!("corr={corr}"));
                    self.timed_out = true;
                }
            }
        }
        self.flush();
        true
    }

    fn deliver(&mut self, env: Envelope<Packet>) {
        if !self.net.accept(&mut self.kernel, &env) {
            return;
        }
        match env.to.as_str() {
            CLIENT => {
                if self.waiting == Some(env.payload.corr) {
                    self.reply = Some(env.payload.frame);
                }
            }
            ADMIN => {}
            id => {
                let now = self.kernel.now();
                let Some(server) = self.servers.get_mut(id) else { return };
                let Ok(reply) = server.dispatch(now, &env.payload.frame) else { return };
                let state = server.state_mut();
                let applied = state.drain_applied();
                state.drain_splits();
                for a in applied {
                    self.kernel.record(
                        id,
                        TraceEvent::Apply,
                        format!(
                            "tablet={} epoch={} key={} value={}",
                            a.tablet,
                            a.epoch,
                            hex::encode(&a.key),
                            hex::encode(&a.value)
                        ),
                    );
                }
                let label = format!("corr={} reply", env.payload.corr);
                let packet = Packet {
                    corr: env.payload.corr,
                    frame: reply,
                };
                self.net.send(&mut self.kernel, id, &env.from, packet, &label);
            }
        }
    }

    fn fault(&mut self, spec: FaultSpec) {
        self.kernel.record(&spec.target, TraceEvent::Fault, spec.to_string());
        let other = spec.arg.clone().unwrap_or_else(|| CLIENT.to_string());
        match spec.kind {
            FaultKind::CrashServer => self.crash(&spec.target),
            FaultKind::RestartServer => {
                self.net.restart(&spec.target);
                if !self.pool.contains(&spec.target) {
                    self.pool.push(spec.target.clone());
                }
            }
            FaultKind::DropLink => self.net.cut_link(&spec.target, &other),
            FaultKind::HealLink => self.net.heal_link(&spec.target, &other),
            FaultKind::SplitTablet => self.request_split(&spec),
        }
    }

    fn crash(&mut self, id: &str) {
        if self.net.is_crashed(id) {
            return;
        }
        self.net.crash(id);
        let Some(server) = self.servers.get_mut(id) else { return };
        let now = self.kernel.now();
        let lapses: Vec<(LeaseName, SimTime)> = server
            .leases()
            .names()
            .filter_map(|n| server.leases().get(n).map(|h| (n.clone(), h.expiry.max(now))))
            .collect();
        server.state_mut().wipe();
        server.leases_mut().clear();
        // The standby's acquire reaches the lockservice one hop after expiry.
        let hop = self.net.latency();
        for (name, expiry) in lapses {
            self.kernel
                .schedule_at(expiry + hop, Event::Takeover(name))
                .expect("not in the past");
        }
    }

    fn request_split(&mut self, spec: &FaultSpec) {
        let Ok(name) = tablet_lease_name(&spec.target) else { return };
        let Some(owner) = self.lock.lock().peek(&name).map(|r| r.owner.clone()) else {
            return;
        };
        self.next_admin_id += 1;
        let req = Request::new(self.next_admin_id, SPLIT)
            .with_name(name)
            .with_key(spec.target.as_bytes())
            .with_value(spec.arg.clone().unwrap_or_default().into_bytes());
        let Ok(frame) = req.encode() else { return };
        let corr = self.fresh_corr();
        self.net
            .send(&mut self.kernel, ADMIN, &owner, Packet { corr, frame }, &format!("corr={corr} method={SPLIT}"));
    }

    fn renew_all(&mut self) {
        let ids: Vec<String> = self.servers.keys().cloned().collect();
        for id in ids {
            if self.net.is_crashed(&id) {
                continue;
            }
            let server = self.servers.get_mut(&id).expect("listed");
            let names: Vec<LeaseName> = server.leases().names().cloned().collect();
            for name in names {
                match self.lock.lock().renew(&name, &id) {
                    Ok(record) => server.leases_mut().record(&record),
                    Err(_) => {
                        server.leases_mut().forget(&name);
                    }
                }
            }
        }
        self.kernel.schedule(self.renew_period(), Event::RenewTick);
    }

    fn takeover(&mut self, name: &LeaseName) {
        let Some(tablet) = tablet_id_of(name).and_then(|id| self.map.lock().get(id).cloned()) else {
            return;
        };
        let candidates: Vec<String> = self.pool.iter().filter(|c| !self.net.is_crashed(c)).cloned().collect();
        for cand in candidates {
            let Ok(record) = self.lock.lock().acquire(name, &cand, self.ttl) else {
                continue;
            };
            // Recovery: replay every durable write in the tablet's range.
            let mut contents = BTreeMap::new();
            for e in self.kernel.trace().of_kind(TraceEvent::Apply) {
                let decoded = e
                    .field("key")
                    .and_then(|k| hex::decode(k).ok())
                    .zip(e.field("value").and_then(|v| hex::decode(v).ok()));
                if let Some((key, value)) = decoded {
                    if tablet.contains(&key) {
                        contents.insert(key, value);
                    }
                }
            }
            let server = self.servers.get_mut(&cand).expect("pool members are servers");
            server.state_mut().load(&tablet.id, contents);
            server.leases_mut().record(&record);
        }
    }

    fn fresh_corr(&mut self) -> u64 {
        self.next_corr += 1;
        self.next_corr
    }
}

impl Transport for World {
    fn now(&self) -> SimTime {
        self.kernel.now()
    }

    fn round_trip(&mut self, target: &str, frame: Vec<u8>, timeout: SimDuration) -> Result<Vec<u8>, TransportError> {
        self.flush();
        let corr = self.fresh_corr();
        let label = match decode_request(&frame) {
            Ok(req) => format!("corr={corr} method={} id={}", req.method, req.id),
            Err(_) => format!("corr={corr}"),
        };
        self.net.send(&mut self.kernel, CLIENT, target, Packet { corr, frame }, &label);
        let timer = self.kernel.schedule(timeout, Event::Timer(corr));
        self.waiting = Some(corr);
        self.reply = None;
        self.timed_out = false;
        let result = loop {
            if !self.step(NEVER) {
                break Err(TransportError::TimedOut);
            }
            if let Some(reply) = self.reply.take() {
                self.kernel.cancel(timer);
                break Ok(reply);
            }
            if self.timed_out {
                break Err(TransportError::TimedOut);
            }
        };
        self.waiting = None;
        result
    }

    fn sleep(&mut self, duration: SimDuration) {
        self.flush();
        let until = self.kernel.now() + duration;
        while self.step(until) {}
        self.kernel.advance_to(until);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Scenario;
    use crate::rpc::codec::decode_response;
    use crate::rpc::Status;
    use crate::tabletkv::PUT;

    fn world(text: &str) -> World {
        World::new(&Scenario::parse(text).unwrap())
    }

    fn put(id: u64, key: &str, value: &str) -> Vec<u8> {
        Request::new(id, PUT)
            .with_name("tablets/T0".parse().unwrap())
            .with_key(key)
            .with_value(value)
            .encode()
            .unwrap()
    }

    fn grants(trace: &Trace, name: &str) -> Vec<(u64, String)> {
        trace
            .of_kind(TraceEvent::LeaseGrant)
            .filter(|e| e.field("name") == Some(name))
            .map(|e| (e.at.as_millis(), e.field("owner").unwrap().to_string()))
            .collect()
    }

    #[test]
    fn round_trip_costs_two_hops() {
        let mut w = world("server srv1\n");
        let reply = w.round_trip("srv1", put(1, "k", "v"), SimDuration::from_secs(1)).unwrap();
        assert_eq!(decode_response(&reply).unwrap().status, Status::Ok);
        assert_eq!(w.now(), SimTime::from_millis(20));
        let kinds: Vec<_> = w.trace().iter().map(|e| (e.at.as_millis(), e.event)).collect();
        assert!(kinds.contains(&(10, TraceEvent::Apply)));
        assert!(kinds.contains(&(20, TraceEvent::Deliver)));
    }

    #[test]
    fn crashed_target_times_out_at_budget() {
        let mut w = world("server srv1\nfault crash srv1 at=0\n");
        w.sleep(SimDuration::from_millis(1));
        let err = w.round_trip("srv1", put(1, "k", "v"), SimDuration::from_millis(700));
        assert_eq!(err, Err(TransportError::TimedOut));
        assert_eq!(w.now(), SimTime::from_millis(701));
        assert_eq!(w.trace().of_kind(TraceEvent::TimeoutFire).count(), 1);
    }

    #[test]
    fn standby_owns_one_hop_after_expiry() {
        // Crash at 5 with 5 s of lease left (the 5 s renewal tick loses the tie).
        let mut w = world("server srv1\nstandby sb1\nlease_ttl 10\nfault crash srv1 at=5.0\n");
        w.sleep(SimDuration::from_secs(12));
        let g = grants(w.trace(), "tablets/T0");
        assert_eq!(g, vec![(0, "srv1".to_string()), (10_010, "sb1".to_string())]);
    }

    #[test]
    fn takeover_timeline_follows_last_renewal() {
        // Timeline oracle: ticks every ttl/2 = 2 s renew to t+4; crash at 5.5 leaves
        // the lease from the 4 s tick, expiring at 8, so the standby wins at 8.01.
        let mut w = world("server srv1\nstandby sb1\nlease_ttl 4\nfault crash srv1 at=5.5\n");
        w.sleep(SimDuration::from_secs(10));
        let expected_expiry = (0..).map(|k| k * 2000).take_while(|t| *t <= 5500).last().unwrap() + 4000;
        assert_eq!(grants(w.trace(), "tablets/T0")[1], (expected_expiry + 10, "sb1".to_string()));
    }

    #[test]
    fn two_standbys_exactly_one_wins() {
        let mut w = world("server srv1\nstandby sb1\nstandby sb2\nfault crash srv1 at=1\n");
        w.sleep(SimDuration::from_secs(20));
        let g = grants(w.trace(), "tablets/T0");
        assert_eq!(g.len(), 2);
        assert_eq!(g[1].1, "sb1");
        assert!(w.server("sb2").unwrap().leases().is_empty());
    }

    #[test]
    fn recovery_replays_durable_writes() {
        let mut w = world("server srv1\nstandby sb1\nfault crash srv1 at=1\n");
        w.round_trip("srv1", put(1, "k", "v1"), SimDuration::from_secs(1)).unwrap();
        w.round_trip("srv1", put(2, "k", "v2"), SimDuration::from_secs(1)).unwrap();
        w.sleep(SimDuration::from_secs(15));
        assert_eq!(w.read_owned(b"k"), Some(("T0".to_string(), Some(b"v2".to_vec()))));
        assert!(w.server("srv1").unwrap().state().table("T0").is_none());
    }

    #[test]
    fn no_standby_means_no_owner() {
        let mut w = world("server srv1\nfault crash srv1 at=1\n");
        w.sleep(SimDuration::from_secs(30));
        assert_eq!(w.read_owned(b"k"), None);
    }

    #[test]
    fn renewals_keep_leases_alive() {
        let mut w = world("server srv1\nlease_ttl 1\n");
        w.sleep(SimDuration::from_secs(5));
        assert!(w.lockservice().lock().peek(&"tablets/T0".parse().unwrap()).is_some());
        assert_eq!(w.trace().of_kind(TraceEvent::LeaseRenew).count(), 10);
    }

    #[test]
    fn scripted_split_moves_ownership() {
        let mut w = world("server srv1\nfault split T0 at=1 arg=m\n");
        w.sleep(SimDuration::from_secs(2));
        assert_eq!(w.tablet_map().lock().version(), 1);
        assert_eq!(w.read_owned(b"z").map(|(t, _)| t), Some("T0b".to_string()));
    }

    #[test]
    fn cut_link_drops_and_heals() {
        let mut w = world("server srv1\nfault drop-link srv1 at=0\nfault heal-link srv1 at=2\n");
        w.sleep(SimDuration::from_millis(1));
        assert!(w.round_trip("srv1", put(1, "k", "v"), SimDuration::from_secs(1)).is_err());
        w.sleep(SimDuration::from_secs(1));
        assert!(w.round_trip("srv1", put(2, "k", "v"), SimDuration::from_secs(1)).is_ok());
    }
}
