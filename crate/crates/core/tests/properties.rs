use ohram_core::metrics::{expected_costs, Cost};
use ohram_core::testkit::Scenario;
use ohram_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn protocol() -> impl Strategy<Value = Protocol> {
    prop::sample::select(Protocol::CORRECT.to_vec())
}

fn any_protocol() -> impl Strategy<Value = Protocol> {
    prop::sample::select(vec![
        Protocol::OhSam,
        Protocol::OhMam,
        Protocol::AbdSwmr,
        Protocol::AbdMwmr,
        Protocol::Naive3x,
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn runs_are_atomic_live_and_clean(protocol in protocol(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Scenario::random(&mut rng, protocol, 10);
        let out = run(&s.config, protocol, &s.workload, &s.schedule, &SimOptions::default()).unwrap();
        prop_assert!(out.invariants.is_clean(), "{:?}", out.invariants.violations);
        prop_assert!(out.metrics.per_op.iter().all(|o| o.completed));
        prop_assert!(check_witness(&out.history).unwrap().atomic);
        prop_assert!(check_bruteforce(&out.history).unwrap().atomic);
    }

    #[test]
    fn failure_free_costs_match_closed_forms(protocol in any_protocol(), n in prop::sample::select(vec![3usize, 5, 7]), seed in any::<u64>()) {
        let writers = if protocol.mode() == Mode::Swmr { 1 } else { 2 };
        let config = Config::new(n, 1, writers, 0);
        let out = run(&config, protocol, &"w1,r1".parse().unwrap(), &Schedule::seeded(seed), &SimOptions::default()).unwrap();
        let (write, read) = (&out.metrics.per_op[0], &out.metrics.per_op[1]);
        let (read_cost, write_cost) = expected_costs(protocol, n);
        prop_assert_eq!(Cost::of(write), write_cost);
        prop_assert_eq!(Cost::of(read), read_cost);
    }
    #[test]
    fn scripts_roundtrip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Scenario::random(&mut rng, Protocol::OhMam, 10);
        let json = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, s);
    }
}
