use criterion::{criterion_group, criterion_main, Criterion};
use dharq_core::sim::{simulate, Protocol, RunConfig};

fn short_runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate_0.2s");
    g.sample_size(10);
    for protocol in Protocol::ALL {
        let mut cfg = RunConfig::new(protocol);
        cfg.traffic.lambda = 800.0;
        cfg.traffic.duration = 0.2;
        g.bench_function(protocol.as_str(), |b| b.iter(|| simulate(&cfg, 0).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, short_runs);
criterion_main!(benches);
