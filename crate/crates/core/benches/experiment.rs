use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use genbayes::analysis::experiment::{
    run_experiment_with, ExperimentConfig, NoObserver, RunOptions,
};
use genbayes::data::{generate_dataset, ModelSpec};
use genbayes::exec::Execution;
use genbayes::hypothesis::{GeneralizedPosterior, LossSpec, PriorSpec};
use genbayes::mcmc::{auto_proposal_scale, metropolis_run, ChainConfig};
use genbayes::risk::erm_fit;

fn bench_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::full_scale(1);
    c.sample_sizes = vec![10, 40, 160, 640];
    c.replicates = 8;
    c.chain.burn_in = 2_000;
    c.chain.iterations = 10_000;
    c
}

fn experiment_grid(c: &mut Criterion) {
    let config = bench_config();
    let mut group = c.benchmark_group("experiment_grid");
    group.sample_size(10);
    for execution in [Execution::Sequential, Execution::Parallel] {
        let options = RunOptions {
            execution,
            timing: false,
        };
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{execution:?}")),
            &options,
            |b, opts| {
                b.iter(|| run_experiment_with(black_box(&config), *opts, &NoObserver).unwrap())
            },
        );
    }
    group.finish();
}

fn posterior_evaluation(c: &mut Criterion) {
    let data = generate_dataset(&ModelSpec::standard(10), 2560, 3).unwrap();
    let prior = PriorSpec::default_ball(3);
    let fast = GeneralizedPosterior::new(LossSpec::squared_half(), &prior, &data).unwrap();
    let direct = GeneralizedPosterior::direct(LossSpec::squared_half(), &prior, &data).unwrap();
    let u = [1.01, 0.98, 1.02];
    let mut group = c.benchmark_group("log_posterior_n2560");
    group.bench_function("gram", |b| b.iter(|| fast.log_density(black_box(&u))));
    group.bench_function("direct", |b| b.iter(|| direct.log_density(black_box(&u))));
    group.finish();
}

fn single_chain(c: &mut Criterion) {
    let data = generate_dataset(&ModelSpec::standard(10), 640, 9).unwrap();
    let prior = PriorSpec::default_ball(3);
    let post = GeneralizedPosterior::new(LossSpec::squared_half(), &prior, &data).unwrap();
    let proposal = auto_proposal_scale(&data).unwrap();
    let init = erm_fit(&data).unwrap();
    let config = ChainConfig {
        burn_in: 2_000,
        iterations: 20_000,
        seed: 5,
        ..ChainConfig::default()
    };
    c.bench_function("metropolis_22k_steps", |b| {
        b.iter(|| metropolis_run(|u| post.log_density(u), &init, &config, &proposal).unwrap())
    });
}

criterion_group!(benches, experiment_grid, posterior_evaluation, single_chain);
criterion_main!(benches);
