use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use agpm_core::agpm::{read_metrics_csv, classify_reason, Reason};
use agpm_core::engine::{simulate, SimConfig};
use agpm_core::hierarchy::{Cache, HierarchyConfig};
use agpm_core::persist::{crash_at, recover};
use agpm_core::strategy::StrategyKind;
use agpm_core::trace::{gen_synthetic, parse_str, serialize, Family, GenParams, Trace};

fn trace(r: Reason) -> Trace {
    let p = GenParams { log_updates: 2_000, ..GenParams::default() };
    gen_synthetic(Family::Reason(r), &p, 1).unwrap()
}

fn engine(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for r in [Reason::A, Reason::B] {
        let t = trace(r);
        for k in [StrategyKind::StaticTemporal, StrategyKind::Agpm] {
            let cfg = SimConfig::new(HierarchyConfig::default(), k);
            g.bench_function(format!("{r}/{k}"), |b| b.iter(|| simulate(&t, &cfg).unwrap()));
        }
    }
    g.finish();
}

fn parsing(c: &mut Criterion) {
    let text = serialize(&trace(Reason::G));
    let mut g = c.benchmark_group("trace");
    g.throughput(Throughput::Bytes(text.len() as u64));
    g.bench_function("parse", |b| b.iter(|| parse_str(&text).unwrap()));
    g.finish();
}

fn cache(c: &mut Criterion) {
    c.bench_function("cache/fill_10k", |b| {
        b.iter_batched(
            || Cache::new(64, 16, 1),
            |mut cache| {
                for i in 0..10_000u64 {
                    cache.fill((i * 7919 % 4096) * 128, 1, false);
                }
                cache
            },
            BatchSize::SmallInput,
        )
    });
}

fn classify(c: &mut Criterion) {
    let rows = read_metrics_csv(&include_bytes!("../../core/fixtures/table2.csv")[..]).unwrap();
    c.bench_function("classify/table", |b| b.iter(|| rows.iter().map(|r| classify_reason(&r.metrics, r.shared)).collect::<Vec<_>>()));
}

fn recovery(c: &mut Criterion) {
    let out = simulate(&trace(Reason::F), &SimConfig::new(HierarchyConfig::default(), StrategyKind::Agpm)).unwrap();
    let img = crash_at(&out.persist, out.persist.len() / 2).unwrap();
    c.bench_function("recover/mid_run", |b| b.iter(|| recover(&img, &out.plan.txs).unwrap()));
}

criterion_group!(benches, engine, parsing, cache, classify, recovery);
criterion_main!(benches);
