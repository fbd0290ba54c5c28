//! Fixed inputs shared by the benchmarks.

use ohram_core::testkit::Scenario;
use ohram_core::{run, History, Protocol, SimOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `count` reproducible adversarial scenarios for `protocol`.
pub fn scenarios(protocol: Protocol, count: usize, max_ops: usize) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe7c);
    (0..count).map(|_| Scenario::random(&mut rng, protocol, max_ops)).collect()
}

/// Histories produced by running [`scenarios`].
pub fn histories(protocol: Protocol, count: usize, max_ops: usize) -> Vec<History> {
    scenarios(protocol, count, max_ops)
        .iter()
        .map(|s| {
            run(&s.config, s.protocol, &s.workload, &s.schedule, &SimOptions::default())
                .expect("scenario runs")
                .history
        })
        .collect()
}
