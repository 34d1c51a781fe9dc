mod common;

use common::*;
use ppn_core::config::RunConfig;
use ppn_core::metrics;
use ppn_core::objective::LossConfig;
use ppn_core::rng::{stream_n, Stream};
use ppn_core::rollout::ClipScheme;
use ppn_core::trainer::Trainer;
use rand::seq::SliceRandom;

#[test]
fn reduced_loss_matches_textbook_surrogate() {
    let cfg = LossConfig::default().ppo2();
    let mut clipped = 0.0;
    for seed in 0..100u64 {
        let env = if seed % 2 == 0 { "pointmass2d" } else { "pendulum" };
        let (p0, batch) = synthetic_batch(seed, env, 16, 48, ClipScheme::Grounded, 1);
        let p = perturbed(&p0, seed, 0.08);
        let mut idx: Vec<usize> = (0..batch.len()).collect();
        idx.shuffle(&mut stream_n(seed, Stream::Shuffle, 0));
        idx.truncate(16);

        let (l, g, b) = ppn_loss(&p, &batch, &idx, &cfg);
        let (lo, go) = ppo2_loss(&p, &batch, &idx, &cfg);
        assert!((l - lo).abs() <= 1e-10, "seed {seed}: loss {l} vs {lo}");
        let worst = flat(&g)
            .iter()
            .zip(flat(&go))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-8, "seed {seed}: grad diff {worst:e}");
        assert_eq!(b.loss_r, 0.0);
        clipped += b.clip_frac_pi + b.clip_frac_v;
    }
    assert!(clipped > 0.0, "no clipping exercised");
}

#[test]
fn reduced_trainer_reproduces_oracle_metrics() {
    let cfg = RunConfig {
        total_steps: 6144,
        n_steps: 1024,
        epochs: 3,
        hidden: 16,
        seed: 4,
        ..RunConfig::default()
    }
    .ppo2();
    let oracle = Ppo2Oracle::from(&cfg.loss());
    let a = Trainer::new(cfg.clone()).unwrap().run(None, |_| {}).unwrap();
    let b = Trainer::with_objective(cfg, Box::new(oracle))
        .unwrap()
        .run(None, |_| {})
        .unwrap();
    assert_eq!(metrics::to_csv(&a.metrics), metrics::to_csv(&b.metrics));
    assert_eq!(flat(&a.params), flat(&b.params));
}
