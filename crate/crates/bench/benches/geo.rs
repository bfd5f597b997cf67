use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use cloudmirror::charging::{generate_fixture_csv, haversine_km, load_registry};

fn bench_haversine(c: &mut Criterion) {
    c.bench_function("haversine_km", |b| {
        b.iter(|| {
            haversine_km(
                black_box(48.7758),
                black_box(9.1829),
                black_box(48.1374),
                black_box(11.5755),
            )
        })
    });
}

fn bench_queries(c: &mut Criterion) {
    let registry = load_registry(&generate_fixture_csv(54_223, 42)).unwrap();
    c.bench_function("closest_charger_54223", |b| {
        b.iter(|| registry.closest_charger(black_box(50.1109), black_box(8.6821)).unwrap())
    });
    c.bench_function("chargers_in_range_25km_54223", |b| {
        b.iter(|| {
            registry
                .chargers_in_range(black_box(50.1109), black_box(8.6821), 25.0)
                .unwrap()
        })
    });
}

fn bench_load(c: &mut Criterion) {
    let text = generate_fixture_csv(5_000, 7);
    c.bench_function("load_registry_5000", |b| {
        b.iter(|| load_registry(black_box(&text)).unwrap())
    });
}

criterion_group!(benches, bench_haversine, bench_queries, bench_load);
criterion_main!(benches);
