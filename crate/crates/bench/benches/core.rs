use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use reservoir_core::linalg::spectral_radius_default;
use reservoir_core::{
    build_topology, derive_stream, ridge_solve, run_once, Matrix, NeuronKind, NeuronModel,
    Reservoir, ReservoirConfig, ReservoirState, RngStream, SignalSpec, TrainingPlan,
};

fn config(kind: NeuronKind, n: usize) -> ReservoirConfig {
    let b = if kind.is_stochastic() { 0.05 } else { 0.0 };
    let mut cfg = ReservoirConfig::new(n, NeuronModel { kind, b });
    cfg.topology_seed = 7;
    cfg
}

fn step(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for n in [20, 50, 200] {
        for kind in [NeuronKind::An, NeuronKind::Bsn] {
            let cfg = config(kind, n);
            let w = build_topology(&cfg).unwrap();
            let mut res = Reservoir::new(&w, &cfg).unwrap();
            let mut state = ReservoirState::zeros(n);
            let mut noise = RngStream::new(1, 0);
            group.bench_with_input(BenchmarkId::new(kind.to_string(), n), &n, |bch, _| {
                bch.iter(|| res.step(&mut state, black_box(0.5), &mut noise).unwrap())
            });
        }
    }
    group.finish();
}

fn spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral_radius");
    for n in [20, 50, 100] {
        let mut s = RngStream::new(3, 0);
        let m = Matrix::from_fn(n, n, |_, _| s.next_uniform(-0.5, 0.5).unwrap());
        group.bench_with_input(BenchmarkId::from_parameter(n), &m, |bch, m| {
            bch.iter(|| spectral_radius_default(black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn ridge(c: &mut Criterion) {
    let mut s = RngStream::new(5, 0);
    let x = Matrix::from_fn(2000, 50, |_, _| s.next_uniform(-1.0, 1.0).unwrap());
    let y = Matrix::from_fn(2000, 1, |_, _| s.next_uniform(-1.0, 1.0).unwrap());
    c.bench_function("ridge_solve_2000x50", |bch| {
        bch.iter(|| ridge_solve(black_box(&x), black_box(&y), 1e-8).unwrap())
    });
}

fn full_run(c: &mut Criterion) {
    let spec = SignalSpec::preset("clean").unwrap();
    let plan = TrainingPlan::default();
    let mut group = c.benchmark_group("run_once");
    group.sample_size(20);
    for kind in [NeuronKind::Asn, NeuronKind::Bsn] {
        let cfg = config(kind, 50);
        group.bench_function(kind.to_string(), |bch| {
            bch.iter(|| {
                run_once(
                    &cfg,
                    &plan,
                    &spec,
                    &mut derive_stream(1, 0, 0),
                    &mut derive_stream(2, 0, 0),
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, step, spectral, ridge, full_run);
criterion_main!(benches);
