use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use starv2x_core::env::Env;
use starv2x_core::harness::{brute_force_over, run_algorithm1, Manifest, Scheme};
use starv2x_core::par::Execution;
use starv2x_core::params::tiny_params;
use starv2x_core::scenario::drop_scenario;
use starv2x_core::star_ris::SurfaceMode;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn oracle_sweep(c: &mut Criterion) {
    let p = tiny_params();
    let mut env = Env::new(p.clone(), drop_scenario(&p, 1).unwrap(), SurfaceMode::Star).unwrap();
    env.reset(1).unwrap();
    let cat = env.catalog().clone();
    let candidates: Vec<Vec<usize>> = (0..cat.cardinality())
        .step_by(23)
        .map(|k| cat.unravel(k))
        .collect();
    let mut g = c.benchmark_group("oracle_sweep");
    g.sample_size(10);
    for mode in MODES {
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &mode,
            |b, &mode| {
                b.iter(|| black_box(brute_force_over(&env, &candidates, mode).unwrap().value))
            },
        );
    }
    g.finish();
}

fn seed_workers(c: &mut Criterion) {
    let mut m = Manifest::new(Scheme::Mab, tiny_params(), (0..4).collect());
    m.episodes = 5;
    let mut g = c.benchmark_group("seed_workers");
    g.sample_size(10);
    for mode in MODES {
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &mode,
            |b, &mode| b.iter(|| black_box(run_algorithm1(&m, mode, None).unwrap().len())),
        );
    }
    g.finish();
}

criterion_group!(benches, oracle_sweep, seed_workers);
criterion_main!(benches);
