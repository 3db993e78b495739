use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polfuse_bench::Fixture;
use polfuse_core::envs::rollout;
use polfuse_core::fusion::{boltzmann, fuse_sqrt, run_personalised_episode, select_action};
use polfuse_core::intent::{IntentModel, LstmParams};
use polfuse_core::learner::TabularQ;
use polfuse_core::FusionParams;

fn fusion(c: &mut Criterion) {
    let q_task = [0.2, 0.9, -0.4, 0.1];
    let q_intent = [1.5, -0.3, 0.0, 0.7];
    c.bench_function("boltzmann", |b| b.iter(|| boltzmann(black_box(&q_task), 0.4).unwrap()));
    let p = boltzmann(&q_task, 0.4).unwrap();
    let r = boltzmann(&q_intent, 3.0).unwrap();
    c.bench_function("fuse_sqrt", |b| b.iter(|| fuse_sqrt(black_box(&p), black_box(&r)).unwrap()));
    c.bench_function("select_action", |b| b.iter(|| select_action(black_box(&q_task), black_box(&q_intent), 0.4, 3.0).unwrap()));
}

fn lstm(c: &mut Criterion) {
    let mut group = c.benchmark_group("lstm");
    for hidden in [16, 64] {
        let fx = Fixture::new(hidden);
        let traj = rollout(&fx.env, 3, |o, _| fx.q.greedy_action(o)).unwrap();
        let xs = fx.intent.encoding.encode_trajectory(&traj).unwrap();
        group.bench_with_input(BenchmarkId::new("forward", hidden), &xs, |b, xs| {
            b.iter(|| fx.intent.lstm.forward(black_box(xs)))
        });
        let model: &IntentModel = &fx.intent;
        group.bench_with_input(BenchmarkId::new("loss_and_grad", hidden), &xs, |b, xs| {
            let mut grad = LstmParams::zeros(model.lstm.input, hidden);
            b.iter(|| model.loss_and_grad(black_box(xs), 2.0, &mut grad))
        });
    }
    group.finish();
}

fn tabular(c: &mut Criterion) {
    let mut t = TabularQ::zeros(100, 4);
    let mut s = 0;
    c.bench_function("tabular_update", |b| {
        b.iter(|| {
            s = (s + 7) % 100;
            t.update(s, s % 4, 0.0, Some((s + 1) % 100), 1.0, 0.99);
        })
    });
}

fn episode(c: &mut Criterion) {
    let fx = Fixture::new(64);
    let params = FusionParams::default();
    let mut seed = 0;
    c.bench_function("personalised_episode", |b| {
        b.iter(|| {
            seed += 1;
            run_personalised_episode(&fx.env, &fx.q, &fx.intent, &params, seed).unwrap()
        })
    });
}

criterion_group!(benches, fusion, lstm, tabular, episode);
criterion_main!(benches);
