mod common;

use bestow::runtime::Config;
use common::batch::{oracle, random_batch, run_batch};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coalesce_matches_atomic_block(seed in any::<u64>(), deterministic in any::<bool>()) {
        let cfg = || if deterministic { Config::deterministic(seed) } else { Config::default() };
        let (init, ops) = random_batch(seed);
        let c = run_batch(cfg(), &init, &ops, true);
        let a = run_batch(cfg(), &init, &ops, false);
        let o = oracle(&init, &ops);
        prop_assert_eq!(c.state.compared(), a.state.compared());
        prop_assert_eq!(c.state.compared(), o.state.compared());
        prop_assert_eq!(&c.results, &a.results);
        prop_assert_eq!(&c.results, &o.results);
    }
}
