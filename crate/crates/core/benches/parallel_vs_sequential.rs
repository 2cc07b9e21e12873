use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use winrisk::conic::{solve, SolverOptions};
use winrisk::model::load_problem;
use winrisk::moments::build_relaxation_with;
use winrisk::montecarlo::{simulate, windowed_mean_series, SampleOptions};

fn modes() -> [(&'static str, bool); 2] {
    [("sequential", false), ("parallel", true)]
}

fn sampling(c: &mut Criterion) {
    let problem = load_problem("oscillator").unwrap();
    let mut group = c.benchmark_group("simulate_oscillator_200_paths");
    group.sample_size(10);
    for (label, parallel) in modes() {
        let opts = SampleOptions { count: 200, parallel, ..SampleOptions::default() };
        group.bench_with_input(BenchmarkId::from_parameter(label), &opts, |b, opts| {
            b.iter(|| {
                let batch = simulate(black_box(&problem), opts).unwrap();
                windowed_mean_series(&batch, &problem.cost, problem.window).unwrap().sup()
            })
        });
    }
    group.finish();
}

fn assembly(c: &mut Criterion) {
    let problem = load_problem("twist").unwrap();
    let mut group = c.benchmark_group("build_twist_k3");
    group.sample_size(10);
    for (label, parallel) in modes() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| build_relaxation_with(black_box(&problem), 3, parallel).unwrap().to_conic())
        });
    }
    group.finish();
}

fn solving(c: &mut Criterion) {
    let problem = load_problem("oscillator").unwrap();
    let prog = build_relaxation_with(&problem, 2, false).unwrap().to_conic();
    let mut group = c.benchmark_group("solve_oscillator_k2");
    group.sample_size(10);
    for (label, parallel) in modes() {
        let opts = SolverOptions { parallel, ..SolverOptions::default() };
        group.bench_with_input(BenchmarkId::from_parameter(label), &opts, |b, opts| {
            b.iter(|| solve(black_box(&prog), opts).unwrap().value)
        });
    }
    group.finish();
}

criterion_group!(benches, sampling, assembly, solving);
criterion_main!(benches);
