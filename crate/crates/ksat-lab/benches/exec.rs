//! Parallel against sequential execution on the three heaviest maps.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ksat_lab::cover::enumerate_covers;
use ksat_lab::formula::gen_uniform;
use ksat_lab::moments::regular_threshold;
use ksat_lab::solver::estimate_sat_probability;
use ksat_lab::Exec;

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn covers(c: &mut Criterion) {
    let f = gen_uniform(3, 11, 30, 7).unwrap();
    let mut g = c.benchmark_group("enumerate_covers n=11");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| enumerate_covers(black_box(&f), 16, e).unwrap())
        });
    }
    g.finish();
}

fn regular_scan(c: &mut Criterion) {
    let mut g = c.benchmark_group("regular_threshold k=6");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| regular_threshold(black_box(6), None, e).unwrap())
        });
    }
    g.finish();
}

fn sat_probability(c: &mut Criterion) {
    let mut g = c.benchmark_group("estimate_sat_probability k=3 n=60");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| estimate_sat_probability(3, 60, black_box(4.2), 40, 1, e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, covers, regular_scan, sat_probability);
criterion_main!(benches);
