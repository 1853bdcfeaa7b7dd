use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use dps_bench::{corpus_score, dps_sampler, problem};
use dps_core::classic_pr::{self, PrConfig, PrMethod};
use dps_core::experiment::Task;
use dps_core::operators::FourierMagnitude;
use dps_core::samplers::{full_chain_gradient, tweedie_estimate};
use dps_core::{corpus, ForwardOperator};

fn sampler_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("dps step");
    for side in [32, 64] {
        let p = problem(Task::Sr, side);
        let sampler = dps_sampler(&p, corpus_score(side));
        group.bench_function(format!("sr {side}x{side}"), |b| {
            b.iter_batched(
                || sampler.init_state(0),
                |mut state| {
                    sampler.step(&mut state).unwrap();
                    state
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let p = problem(Task::DeblurGauss, 64);
    let score = corpus_score(64);
    let sampler = dps_sampler(&p, score.clone());
    let x = sampler.init_state(0).x;
    c.bench_function("tweedie estimate 64x64", |b| b.iter(|| tweedie_estimate(score.as_ref(), black_box(&x), 500).unwrap()));
    c.bench_function("full-chain gradient deblur 64x64", |b| {
        b.iter(|| full_chain_gradient(sampler.config(), black_box(&x), 500).unwrap())
    });
}

fn phase_retrieval(c: &mut Criterion) {
    let (shape, truth, support) = corpus::toy_blob(32);
    let op = FourierMagnitude::new(shape, 2.0).unwrap().orthonormal();
    let y = op.apply(&truth).unwrap();
    c.bench_function("fourier magnitude 32x32 at 2x", |b| b.iter(|| op.apply(black_box(&truth)).unwrap()));
    let mut cfg = PrConfig::new(support);
    cfg.iterations = 100;
    cfg.restarts = 1;
    c.bench_function("hio 100 iterations 32x32", |b| b.iter(|| classic_pr::run(PrMethod::Hio, &op, &y, &cfg).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = sampler_steps, gradients, phase_retrieval
}
criterion_main!(benches);
