//! Sequential vs rayon executor on the data-parallel hot spots.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ppn_core::config::RunConfig;
use ppn_core::envs;
use ppn_core::exec::{EvalConfig, ExecMode};
use ppn_core::model::{Dims, PPNParams};
use ppn_core::par::Parallelism;
use ppn_core::rng::{stream, Stream};
use ppn_core::rollout::{build_batch, BatchSpec, ClipScheme, Collector};
use ppn_core::trainer::{evaluate, Trainer};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn params(env: &str) -> PPNParams {
    let spec = envs::spec(env).unwrap();
    let dims = Dims {
        obs: spec.obs_dim,
        act: spec.act_dim,
        hidden: 128,
    };
    PPNParams::init(dims, &mut stream(0, Stream::Init))
}

fn bench_cache(c: &mut Criterion) {
    let p = params("pointmass2d");
    let mut col = Collector::new(
        envs::make("pointmass2d", stream(0, Stream::Env)).unwrap(),
        stream(0, Stream::Action),
        1.0,
    );
    let raw = col.collect(&p, 2048, &[0.5, 0.5]).unwrap();
    let spec = BatchSpec {
        gamma: 0.99,
        lambda: 0.95,
        scheme: ClipScheme::Ungrounded,
        depth: 5,
        normalize_advantages: true,
    };
    let mut g = c.benchmark_group("ungrounded_cache_2048x5");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| black_box(build_batch(&raw, &p, &spec, mode).unwrap()))
        });
    }
    g.finish();
}

fn bench_eval(c: &mut Criterion) {
    let p = params("pointmass2d");
    let cfg = EvalConfig {
        mode: ExecMode::Mpc,
        horizon: 5,
        episodes: 8,
        stochastic: true,
        seed: 0,
    };
    let mut g = c.benchmark_group("mpc_eval_8_episodes");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| black_box(evaluate(&p, "pointmass2d", &[0.1, 0.1], &cfg, mode).unwrap()))
        });
    }
    g.finish();
}

fn bench_iteration(c: &mut Criterion) {
    let cfg = RunConfig {
        n_steps: 1024,
        epochs: 1,
        minibatch: 256,
        total_steps: 1 << 40,
        ..RunConfig::default()
    }
    .with_depth(5);
    let mut g = c.benchmark_group("train_iteration_4_shards");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter_batched(
                || Trainer::new(cfg.clone()).unwrap().with_parallelism(mode).with_grad_shards(4),
                |mut t| black_box(t.iterate().unwrap()),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, bench_cache, bench_eval, bench_iteration);
criterion_main!(benches);
