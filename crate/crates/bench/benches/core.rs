use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvdist_bench::{aa_density, correlation, epoch};
use mvdist_core::fitting::{fit_epoch, fit_interval, FitConfig, Scale};
use mvdist_core::spectra::eigendecompose;
use mvdist_core::studies::aggregate_slice;
use mvdist_core::Family;
use std::hint::black_box;

fn spectra(c: &mut Criterion) {
    let mut group = c.benchmark_group("eigendecompose");
    for k in [50, 100, 300] {
        let m = correlation(k, 4 * k);
        group.bench_with_input(BenchmarkId::from_parameter(k), &m, |b, m| b.iter(|| eigendecompose(black_box(m)).unwrap()));
    }
    group.finish();
    let panel = epoch(100, 2000);
    c.bench_function("aggregate 100x2000", |b| b.iter(|| aggregate_slice(black_box(&panel)).unwrap()));
}

fn pdf(c: &mut Criterion) {
    let xs: Vec<f64> = (0..201).map(|i| -10.0 + 0.1 * i as f64).collect();
    let mut group = c.benchmark_group("interval pdf, 201 points");
    for (family, l, big_l) in [(Family::GG, None, None), (Family::GA, None, Some(12.0)), (Family::AG, Some(2.6), None), (Family::AA, Some(2.6), Some(12.0))] {
        let m = family.model(l, 6.0, big_l).unwrap();
        group.bench_function(family.to_string(), |b| b.iter(|| m.curve(black_box(&xs)).unwrap()));
    }
    group.finish();
}

fn fits(c: &mut Criterion) {
    let d = aa_density(200_000);
    let cfg = FitConfig::default();
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("epoch log", |b| b.iter(|| fit_epoch(black_box(&d), Scale::Log, &cfg).unwrap()));
    group.bench_function("GG log", |b| b.iter(|| fit_interval(black_box(&d), Family::GG, None, Scale::Log, &cfg).unwrap()));
    group.bench_function("AA log", |b| b.iter(|| fit_interval(black_box(&d), Family::AA, Some(2.6), Scale::Log, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, spectra, pdf, fits);
criterion_main!(benches);
