use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use leasewire::lockservice::LockService;
use leasewire::resolver::{Chain, LeaseResolver, StaticResolver, TabletStage};
use leasewire::rpc::{call, CallError, CallPolicy, Request, Status};
use leasewire::sim::{SimDuration, WallClock};
use leasewire::tabletkv::{tablet_server, SharedTabletMap, TabletMap, GET, PUT};

#[test]
fn library_call_over_loopback() {
    let clock = Arc::new(WallClock::new());
    let lock = LockService::new(clock.clone()).into_shared();
    let map = SharedTabletMap::new(TabletMap::single("T0").unwrap());
    let ttl = SimDuration::from_secs(30);

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let mut server = tablet_server(addr.clone(), map.clone(), lock.clone(), ttl);
    let record = lock.lock().acquire(&"tablets/T0".parse().unwrap(), &addr, ttl).unwrap();
    server.leases_mut().record(&record);
    let handle = leasewire::rpc::tcp::serve_tcp(listener, Arc::new(Mutex::new(server)), clock).unwrap();

    let chain = Chain::new().then(TabletStage::new(map)).then(LeaseResolver::new(lock));
    let mut transport = leasewire::rpc::tcp::TcpTransport::new();
    let policy = CallPolicy::default();

    let put = Request::new(1, PUT).with_key("apple").with_value("red");
    let out = call(&mut transport, &chain, &put, &policy).unwrap();
    assert_eq!((out.response.status, out.attempts), (Status::Ok, 1));

    let get = Request::new(2, GET).with_key("apple");
    let out = call(&mut transport, &chain, &get, &policy).unwrap();
    assert_eq!(out.response.value_str(), "red");

    handle.shutdown();
}

#[test]
fn unreachable_static_target_exhausts() {
    // Bind then drop to get a port with nobody listening.
    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let chain = Chain::new().then(StaticResolver::new(BTreeMap::from([("db".to_string(), addr)])));
    let policy = CallPolicy {
        max_attempts: 3,
        initial_backoff: SimDuration::from_millis(10),
        ..CallPolicy::default()
    };
    let req = Request::new(1, GET).with_name("db".parse().unwrap()).with_key("k");
    let err = call(&mut leasewire::rpc::tcp::TcpTransport::new(), &chain, &req, &policy).unwrap_err();
    assert_eq!(err, CallError::Exhausted { attempts: 3 });
}
