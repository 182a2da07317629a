use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gsc_core::ot::uniform;
use gsc_core::{gromov_wasserstein, sinkhorn, RngStream, SinkhornOptions, Tensor};
use std::hint::black_box;

fn random(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.uniform()).collect()).unwrap()
}

fn bench_sinkhorn(c: &mut Criterion) {
    let mut group = c.benchmark_group("sinkhorn");
    for n in [5, 10, 20, 30] {
        let cost = random(&mut RngStream::new(n as u64), n, n);
        let opts = SinkhornOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| sinkhorn(black_box(cost), &uniform(n), &uniform(n), &opts).unwrap())
        });
    }
    group.finish();
}

fn bench_gromov(c: &mut Criterion) {
    let mut group = c.benchmark_group("gromov_wasserstein");
    for n in [5, 10, 20, 30] {
        let mut rng = RngStream::new(7);
        let (c1, c2, t) = (random(&mut rng, n, n), random(&mut rng, n, n), random(&mut rng, n, n));
        group.bench_with_input(BenchmarkId::from_parameter(n), &(c1, c2, t), |b, (c1, c2, t)| {
            b.iter(|| gromov_wasserstein(black_box(c1), black_box(c2), black_box(t)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sinkhorn, bench_gromov);
criterion_main!(benches);
