//! Scenario files shipped with the crate.

use super::run::Simulation;
use super::scenario::Scenario;

pub const FAILOVER_SCN: &str = include_str!("../../scenarios/failover.scn");
pub const SPLIT_SCN: &str = include_str!("../../scenarios/split.scn");
pub const CACHE_SCN: &str = include_str!("../../scenarios/cache.scn");
pub const DEMO_SPLIT_SCN: &str = include_str!("../../scenarios/demo_split.scn");

/// `(file name, text)` for every shipped scenario.
pub fn shipped() -> [(&'static str, &'static str); 3] {
    [
        ("failover.scn", FAILOVER_SCN),
        ("split.scn", SPLIT_SCN),
        ("cache.scn", CACHE_SCN),
    ]
}

pub fn demo_split() -> Simulation {
    Simulation::run(&Scenario::parse(DEMO_SPLIT_SCN).expect("shipped scenario parses"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenarios_parse() {
        for (name, text) in shipped() {
            Scenario::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        Scenario::parse(DEMO_SPLIT_SCN).unwrap();
    }

    #[test]
    fn demo_split_retries_once_and_lands_in_child() {
        let sim = demo_split();
        assert_eq!(sim.not_owner_retries, 1);
        assert!(sim.ops.iter().all(|o| o.acked));
        for (key, value) in sim.last_acked_puts() {
            let (tablet, held) = sim.world.read_owned(&key).unwrap();
            assert!(tablet == "T0a" || tablet == "T0b");
            assert_eq!(held, Some(value));
        }
    }
}
