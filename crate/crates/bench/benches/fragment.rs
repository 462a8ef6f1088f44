use bmux_bench::bundle;
use bmux_core::fragment::{fragment_bundle, reassemble};
use bmux_core::CrcType;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn fragmentation(c: &mut Criterion) {
    let mut g = c.benchmark_group("fragment");
    let b = bundle(1 << 20, CrcType::Crc32C);
    g.throughput(Throughput::Bytes(1 << 20));
    for max in [1024u64, 4096, 65536] {
        let parts = fragment_bundle(&b, max).unwrap();
        g.bench_with_input(BenchmarkId::new("split", max), &max, |bench, &m| {
            bench.iter(|| fragment_bundle(&b, m).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("reassemble", max), &parts, |bench, p| {
            bench.iter(|| reassemble(p).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, fragmentation);
criterion_main!(benches);
