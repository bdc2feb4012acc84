use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ping_core::experiments::{Experiment, SimDesign};
use ping_core::samplers::ChainConfig;
use ping_core::Execution;

fn small_study() -> Experiment {
    let mut design = SimDesign::soi();
    design.grid = 6;
    design.n_obs = 20;
    Experiment {
        design,
        priors: vec![1, 2],
        reps: 4,
        chain: ChainConfig {
            iterations: 50,
            burnin: 50,
            seed: 1,
            ..Default::default()
        },
    }
}

fn replications(c: &mut Criterion) {
    let study = small_study();
    let mut group = c.benchmark_group("replications");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| study.run(exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, replications);
criterion_main!(benches);
