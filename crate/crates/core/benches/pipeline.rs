//! Parallel versus single-threaded execution of the main per-path kernels.
//!
//! With the `parallel` feature the "parallel" case uses the global rayon
//! pool and the "sequential" case runs inside a one-thread pool; without the
//! feature both cases take the plain iterator path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use optexec::config::ExperimentConfig;
use optexec::experiment::solve_round_trip;
use optexec::kernels::{build_nystrom, KernelSpec, TimeGrid};
use optexec::lsmc::{LsmcProvider, RegressionConfig};
use optexec::resistance::{solve_resistance, ResistanceOptions};
use optexec::signals::{alpha_closed_form, build_features, simulate_mu, OUParams};
use optexec::ResistanceFn;

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f),
        None => f(),
    }
}

const CASES: [(&str, Option<usize>); 2] = [("parallel", None), ("sequential", Some(1))];

fn resistance(c: &mut Criterion) {
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let kernel = KernelSpec::new(0.0, 0.467, 0.614).unwrap();
    let lg = build_nystrom(&kernel, &grid).unwrap();
    let ou = OUParams::new(10.0, 1.0, 1.0, 1.0).unwrap();
    let u = alpha_closed_form(&ou, &simulate_mu(&ou, &grid, 2000, 1).unwrap()).unwrap();
    let f = ResistanceFn::power(2.0).unwrap();
    let mut group = c.benchmark_group("resistance_2000_paths");
    for (name, threads) in CASES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_threads(threads, || solve_resistance(&u, &lg, &f, &ResistanceOptions::default(), None).unwrap()))
        });
    }
    group.finish();
}

fn regression(c: &mut Criterion) {
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let ou = OUParams::new(10.0, 1.0, 1.0, 1.0).unwrap();
    let alpha = alpha_closed_form(&ou, &simulate_mu(&ou, &grid, 2000, 1).unwrap()).unwrap();
    let features = build_features(&alpha, &ou).unwrap();
    let mut group = c.benchmark_group("lsmc_fit_2000_paths");
    for (name, threads) in CASES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_threads(threads, || LsmcProvider::new(&features, &RegressionConfig::default()).unwrap()))
        });
    }
    group.finish();
}

fn round_trip(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default();
    cfg.mc.paths = 200;
    cfg.grid.steps = 50;
    cfg.scheme.max_outer = 3;
    let mut group = c.benchmark_group("stochastic_round_trip_3_iterations");
    group.sample_size(10);
    for (name, threads) in CASES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_threads(threads, || solve_round_trip(&cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, resistance, regression, round_trip);
criterion_main!(benches);
