use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use cloudmirror::engine;
use cloudmirror_bench::staggered_workload;

fn bench_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("engine_run");
    for &(vms, per_vm) in &[(4u32, 250u64), (16, 250), (16, 1000)] {
        let (hosts, vms_list, cloudlets) = staggered_workload(vms, per_vm);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{vms}x{per_vm}")),
            &cloudlets,
            |b, cloudlets| {
                b.iter(|| engine::run(black_box(&hosts), black_box(&vms_list), black_box(cloudlets)).unwrap())
            },
        );
    }
    group.finish();
}

fn bench_series(c: &mut Criterion) {
    let (hosts, vms, cloudlets) = staggered_workload(8, 1000);
    let result = engine::run(&hosts, &vms, &cloudlets).unwrap();
    c.bench_function("utilization_series_100ms", |b| {
        b.iter(|| engine::utilization_series(black_box(&result), cloudmirror::VmId(0), 100_000).unwrap())
    });
}

criterion_group!(benches, bench_run, bench_series);
criterion_main!(benches);
