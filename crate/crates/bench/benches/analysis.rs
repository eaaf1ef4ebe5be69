use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dharq_core::analysis::montecarlo::mc_outage_ti;
use dharq_core::analysis::{interferer_distribution, outage_prob_ti, BirthTimeDist, QuadratureConfig, Scenario3};
use dharq_core::channel::{decoded_bits, sample_fading_trace, SinrSegment};
use dharq_core::units::Position;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn scenario() -> Scenario3 {
    Scenario3::with_defaults(Position::new(0.0, 0.0), Position::new(60.0, 0.0), Position::new(80.0, 0.0)).unwrap()
}

fn quadrature(c: &mut Criterion) {
    let s = scenario();
    let q = QuadratureConfig::default();
    let t = 0.5 * s.packet_duration();
    c.bench_function("outage_prob_ti", |b| b.iter(|| outage_prob_ti(black_box(&s), t, &q).unwrap()));
    let f = BirthTimeDist::uniform(s.packet_duration());
    c.bench_function("interferer_distribution", |b| b.iter(|| interferer_distribution(black_box(&s), &f, &q).unwrap()));
}

fn monte_carlo(c: &mut Criterion) {
    let s = scenario();
    let t = 0.5 * s.packet_duration();
    c.bench_function("mc_outage_ti_10k", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(1),
            |mut rng| mc_outage_ti(&s, t, 10_000, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn channel(c: &mut Criterion) {
    let segments: Vec<SinrSegment> = (0..64).map(|k| SinrSegment::new(1e-4, 0.5 + k as f64)).collect();
    c.bench_function("decoded_bits_64", |b| b.iter(|| decoded_bits(black_box(&segments), 1e6).unwrap()));
    c.bench_function("fading_trace_1s", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(2),
            |mut rng| sample_fading_trace(1.0, 1e-3, 10.0, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, quadrature, monte_carlo, channel);
criterion_main!(benches);
