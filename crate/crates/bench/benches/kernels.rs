use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use psde_bench::{driving_path, smooth_setup};
use psde_core::malliavin::derivative_field;
use psde_core::simulate::{simulate, Scheme, SimConfig};
use psde_core::skorokhod::{solve_max_min, SolverOptions};
use psde_core::PerturbationParams;
use std::hint::black_box;

fn solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_max_min");
    let opts = SolverOptions::default();
    for (alpha, beta) in [(0.5, 0.0), (0.3, 0.2), (0.6, 0.3)] {
        let params = PerturbationParams::new(alpha, beta).unwrap();
        let path = driving_path(1001, 7);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{alpha},{beta}")), &path, |b, path| {
            b.iter(|| solve_max_min(black_box(path), &params, &opts).unwrap())
        });
    }
    group.finish();
}

fn schemes(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    let (model, params, cfg) = smooth_setup(1000);
    for scheme in [Scheme::PerStep, Scheme::Picard] {
        let cfg = SimConfig { scheme, ..cfg.clone() };
        group.bench_function(format!("{scheme:?}"), |b| b.iter(|| simulate(&model, &params, black_box(&cfg)).unwrap()));
    }
    group.finish();
}

fn field(c: &mut Criterion) {
    let mut group = c.benchmark_group("derivative_field");
    group.sample_size(20);
    for n in [250usize, 1000] {
        let (model, params, cfg) = smooth_setup(n);
        let path = simulate(&model, &params, &cfg).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &path, |b, path| {
            b.iter(|| derivative_field(black_box(path), &model, &params).unwrap().h_norm_profile())
        });
    }
    group.finish();
}

criterion_group!(benches, solver, schemes, field);
criterion_main!(benches);
