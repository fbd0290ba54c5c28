use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ohram_bench::histories;
use ohram_core::{check_bruteforce, check_witness, Protocol};

pub fn checkers(c: &mut Criterion) {
    let batch = histories(Protocol::OhMam, 50, 10);
    c.bench_function("witness 50 histories", |b| {
        b.iter(|| batch.iter().filter(|h| check_witness(black_box(h)).unwrap().atomic).count())
    });
    c.bench_function("bruteforce 50 histories", |b| {
        b.iter(|| batch.iter().filter(|h| check_bruteforce(black_box(h)).unwrap().atomic).count())
    });
}

criterion_group!(benches, checkers);
criterion_main!(benches);
