//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails.

use std::time::Instant;

use leasewire::harness::{
    check_trace, ClientMode, Scenario, Simulation, Violation, CACHE_SCN, FAILOVER_SCN, SPLIT_SCN,
};
use leasewire::lockservice::LeaseName;
use leasewire::rpc::codec::{decode_frame, encode_frame, CodecError, Message, Request, Response, Status};
use leasewire::rpc::next_backoff;
use leasewire::sim::{trace_hash, SimDuration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Suite {
    failed: Vec<&'static str>,
    violations: Vec<(String, u64, Violation)>,
}

impl Suite {
    fn report(&mut self, id: u32, name: &'static str, pass: bool, detail: String, started: Instant) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} [{id}] {name}: {detail} ({:.1}s)",
            started.elapsed().as_secs_f64()
        );
        if !pass {
            self.failed.push(name);
        }
    }

    fn audit(&mut self, scenario: &str, seed: u64, sim: &Simulation) {
        for v in check_trace(sim.trace()) {
            self.violations.push((scenario.to_string(), seed, v));
        }
    }
}

fn parse(text: &str) -> Scenario {
    Scenario::parse(text).expect("shipped scenario parses")
}

fn lost_put_contrast(suite: &mut Suite) {
    let t = Instant::now();
    let base = parse(FAILOVER_SCN);
    let trials = 1000u64;
    let (mut naive_lossy, mut library_lossless) = (0u64, 0u64);
    for seed in 0..trials {
        let naive = Simulation::run(&base.clone().with_seed(seed).with_client_mode(ClientMode::Naive));
        suite.audit("failover.scn/naive", seed, &naive);
        naive_lossy += u64::from(naive.metrics.ops_lost >= 1);

        let library = Simulation::run(&base.clone().with_seed(seed).with_client_mode(ClientMode::Library));
        suite.audit("failover.scn/library", seed, &library);
        library_lossless += u64::from(library.metrics.ops_lost == 0);
    }
    let pass = naive_lossy * 100 >= trials * 95 && library_lossless == trials;
    suite.report(
        1,
        "lost-put contrast on failover.scn",
        pass,
        format!(
            "naive lost >=1 put in {naive_lossy}/{trials} trials (need >=95%), library lost none in {library_lossless}/{trials} (need all)"
        ),
        t,
    );
}

fn split_survival(suite: &mut Suite) {
    let t = Instant::now();
    let base = parse(SPLIT_SCN);
    let trials = 500u64;
    let mut good = 0u64;
    let mut raced = 0u64;
    let mut first_bad = None;
    for seed in 0..trials {
        let sim = Simulation::run(&base.clone().with_seed(seed));
        suite.audit("split.scn", seed, &sim);
        let all_ok = sim.ops.iter().all(|o| o.status == Some(Status::Ok));
        let readable = sim.last_acked_puts().into_iter().all(|(key, value)| {
            let expected_tablet = if key.as_slice() < b"m".as_slice() { "T0a" } else { "T0b" };
            sim.world.read_owned(&key) == Some((expected_tablet.to_string(), Some(value)))
        });
        raced += u64::from(sim.not_owner_retries >= 1);
        if all_ok && readable {
            good += 1;
        } else if first_bad.is_none() {
            first_bad = Some(seed);
        }
    }
    suite.report(
        2,
        "split survival on split.scn",
        good == trials && raced == trials,
        format!(
            "{good}/{trials} trials had every put ok and readable at its child tablet; {raced}/{trials} hit a stale-route retry{}",
            first_bad.map_or(String::new(), |s| format!("; first bad seed {s}"))
        ),
        t,
    );
}

fn backoff_exactness(suite: &mut Suite) {
    let t = Instant::now();
    let mut seq = Vec::new();
    let mut cur = SimDuration::from_secs(1);
    for _ in 0..8 {
        cur = next_backoff(cur);
        seq.push(cur.as_millis());
    }
    let expected: Vec<u64> = [2, 4, 8, 16, 32, 60, 60, 60].iter().map(|s| s * 1000).collect();
    let exact = seq == expected;
    suite.report(3, "backoff trajectory from 1 s", exact, format!("{seq:?} ms"), t);
}

fn cache_economy(suite: &mut Suite) {
    let t = Instant::now();
    let s = parse(CACHE_SCN);
    let sim = Simulation::run(&s);
    suite.audit("cache.scn", s.seed, &sim);
    let m = sim.metrics;
    suite.report(
        4,
        "cache economy on cache.scn",
        m.lockservice_lookups <= 2 && m.cache_hits >= 998 && m.ops_issued == 1000,
        format!(
            "{} puts, lockservice_lookups={} (need <=2), cache_hits={} (need >=998)",
            m.ops_issued, m.lockservice_lookups, m.cache_hits
        ),
        t,
    );
}

fn mutual_exclusion(suite: &mut Suite) {
    let t = Instant::now();
    // Extra cache.scn seeds on top of the trials already audited above.
    let base = parse(CACHE_SCN);
    for seed in 1..20 {
        let sim = Simulation::run(&base.clone().with_seed(seed));
        suite.audit("cache.scn", seed, &sim);
    }
    let n = suite.violations.len();
    let detail = match suite.violations.first() {
        None => "no overlapping leases or unowned applies in any audited trace".to_string(),
        Some((scn, seed, v)) => format!("{n} violation(s); first in {scn} seed {seed} at {}ms: {}", v.at.as_millis(), v.message),
    };
    suite.report(5, "lease mutual exclusion", n == 0, detail, t);
}

fn determinism(suite: &mut Suite) {
    let t = Instant::now();
    let scenarios = [
        parse(FAILOVER_SCN).with_client_mode(ClientMode::Library),
        parse(FAILOVER_SCN).with_client_mode(ClientMode::Naive),
        parse(SPLIT_SCN),
        parse(CACHE_SCN),
    ];
    let mut mismatches = 0;
    let pairs = 100u64;
    for i in 0..pairs {
        let s = scenarios[(i % 4) as usize].clone().with_seed(1000 + i);
        let a = Simulation::run(&s);
        let b = Simulation::run(&s);
        if trace_hash(a.trace()) != trace_hash(b.trace()) || a.metrics != b.metrics {
            mismatches += 1;
        }
    }
    suite.report(
        6,
        "determinism under a fixed seed",
        mismatches == 0,
        format!("{mismatches} mismatches in {pairs} paired runs"),
        t,
    );
}

fn random_bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| rng.gen()).collect()
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    if rng.gen_bool(0.5) {
        let mut req = Request::new(rng.gen(), format!("m{}", rng.gen_range(0..1000)));
        if rng.gen_bool(0.7) {
            let segs = rng.gen_range(1..4);
            let path: Vec<String> = (0..segs).map(|_| format!("s{}", rng.gen_range(0..100))).collect();
            req = req.with_name(LeaseName::new(path.join("/")).expect("valid name"));
            if rng.gen_bool(0.5) {
                req = req.with_fence(rng.gen());
            }
        }
        Message::Request(req.with_key(random_bytes(rng, 40)).with_value(random_bytes(rng, 200)))
    } else {
        let id = rng.gen();
        let value = random_bytes(rng, 200);
        Message::Response(match rng.gen_range(0..3) {
            0 => Response::ok(id, value),
            1 => Response::app_error(id, value),
            _ => Response {
                value,
                ..Response::not_owner(id)
            },
        })
    }
}

fn codec_round_trip(suite: &mut Suite) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1ea5e);
    let total = 10_000;
    let mut round_trips = 0;
    let mut truncations = 0u64;
    let mut bad_truncations = 0u64;
    for _ in 0..total {
        let msg = random_message(&mut rng);
        let frame = encode_frame(&msg).expect("within limits");
        round_trips += u32::from(decode_frame(&frame).as_ref() == Ok(&msg));
        for cut in 0..frame.len() {
            truncations += 1;
            if !matches!(decode_frame(&frame[..cut]), Err(CodecError::Malformed(_))) {
                bad_truncations += 1;
            }
        }
    }
    suite.report(
        7,
        "codec round-trip and truncation",
        round_trips == total && bad_truncations == 0,
        format!(
            "{round_trips}/{total} round-trips exact; {bad_truncations} of {truncations} truncated frames not reported malformed"
        ),
        t,
    );
}

fn main() {
    let mut suite = Suite {
        failed: Vec::new(),
        violations: Vec::new(),
    };
    lost_put_contrast(&mut suite);
    split_survival(&mut suite);
    backoff_exactness(&mut suite);
    cache_economy(&mut suite);
    mutual_exclusion(&mut suite);
    determinism(&mut suite);
    codec_round_trip(&mut suite);
    if suite.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", suite.failed.len(), suite.failed.join(", "));
        std::process::exit(1);
    }
}
