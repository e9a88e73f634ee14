use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use impulse_core::qvi::{solve_system, verify_candidate, GridOptions, InitialGuess, SolveOptions};
use impulse_core::sim::{simulate_paths, SimConfig};
use impulse_core::symmetric::{closed_form_equilibrium, solve_xi_root};
use impulse_core::{Costs, GameSpec, RawGameSpec, ThresholdStrategy, ValidationOptions};

fn problem1() -> GameSpec {
    GameSpec::linear(
        0.15,
        0.02,
        -3.0,
        3.0,
        Costs {
            c: 100.0,
            c_tilde: 0.0,
            lambda: 15.0,
            lambda_tilde: 15.0,
        },
    )
    .unwrap()
}

fn cubic() -> GameSpec {
    let raw = RawGameSpec {
        sigma: 0.2,
        rho: 0.1,
        costs: Costs {
            c: 60.0,
            c_tilde: 20.0,
            lambda: 5.0,
            lambda_tilde: 5.0,
        },
        f1: vec![32.4, 32.4, 10.8, 1.2],
        f2: vec![27.0, -27.0, 9.0, -1.0],
    };
    impulse_core::validate_spec(raw, ValidationOptions::default()).unwrap()
}

fn bench_symmetric(c: &mut Criterion) {
    let spec = problem1();
    c.bench_function("xi_root_c750", |b| {
        b.iter(|| solve_xi_root(black_box(750.0), spec.theta(), spec.eta(), 1e-9))
    });
    c.bench_function("closed_form_problem1", |b| b.iter(|| closed_form_equilibrium(black_box(&spec))));
}

fn bench_newton(c: &mut Criterion) {
    let spec = cubic();
    let opts = SolveOptions::default();
    c.bench_function("solve_system_cubic", |b| {
        b.iter(|| solve_system(black_box(&spec), InitialGuess::Auto, &opts))
    });
}

fn bench_verify(c: &mut Criterion) {
    let spec = problem1();
    let (p, _) = closed_form_equilibrium(&spec).unwrap();
    let grid = GridOptions {
        points: 401,
        ..GridOptions::default()
    };
    c.bench_function("verify_problem1_401", |b| b.iter(|| verify_candidate(black_box(&p), &spec, &grid)));
}

fn bench_sim(c: &mut Criterion) {
    let spec = problem1();
    let (p, _) = closed_form_equilibrium(&spec).unwrap();
    let (s1, s2) = ThresholdStrategy::pair_from(&p);
    let cfg = SimConfig {
        x0: 0.0,
        dt: 0.01,
        horizon: 50.0,
        n_paths: 100,
        seed: 1,
        bridge_correction: false,
    };
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    group.bench_function("problem1_100_paths", |b| b.iter(|| simulate_paths(&spec, &s1, &s2, black_box(&cfg))));
    group.finish();
}

criterion_group!(benches, bench_symmetric, bench_newton, bench_verify, bench_sim);
criterion_main!(benches);
