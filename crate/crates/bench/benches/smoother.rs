use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use pehsmooth_bench::fixture;
use pehsmooth_core::{
    interval_log_likelihood, run_two_filter_smoother, DiscountPrior, ForwardRecursion, SmootherConfig,
};
use std::hint::black_box;

fn likelihood(c: &mut Criterion) {
    let (panel, _) = fixture(5, 2500, 4, 1);
    let slice = &panel.intervals[0];
    let beta = vec![-9.0, 0.1, -0.2, 0.3, 0.0, 0.5];
    c.bench_function("interval_log_likelihood/n2500_p5", |b| {
        b.iter(|| interval_log_likelihood(black_box(slice), black_box(&beta)))
    });
}

fn recursion(c: &mut Criterion) {
    let (panel, _) = fixture(1, 2500, 4, 2);
    let slice = &panel.intervals[0];
    let u = DMatrix::identity(2, 2) * 0.25;
    c.bench_function("forward_recursion/covariance", |b| {
        b.iter(|| ForwardRecursion::new(black_box(&u), black_box(slice)).unwrap())
    });
    let rec = ForwardRecursion::new(&u, slice).unwrap();
    let prev = [-11.0, 0.2];
    c.bench_function("forward_recursion/mean", |b| {
        b.iter(|| rec.mean(black_box(slice), black_box(&prev)))
    });
}

fn smoother(c: &mut Criterion) {
    let mut group = c.benchmark_group("two_filter_smoother");
    group.sample_size(10);
    for subjects in [250usize, 1000] {
        let (panel, partition) = fixture(1, subjects, 8, 3);
        let prior = DiscountPrior::new(0.45, panel.dim());
        let config = SmootherConfig::new(250, 2, 4);
        group.bench_with_input(BenchmarkId::from_parameter(subjects), &subjects, |b, _| {
            b.iter(|| run_two_filter_smoother(&panel, &partition, &prior, &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, likelihood, recursion, smoother);
criterion_main!(benches);
