mod common;

use common::*;
use ppn_core::objective::{grounded_clips, ungrounded_clips, LossConfig};
use ppn_core::rollout::ClipScheme;

#[test]
fn fully_clipped_single_samples_have_zero_gradient() {
    for scheme in [ClipScheme::Grounded, ClipScheme::Ungrounded] {
        for seed in 0..20u64 {
            let depth = 1 + (seed as usize % 3);
            let (p0, mut batch) = synthetic_batch(seed, "pointmass2d", 8, 12, scheme, depth);
            let p = perturbed(&p0, seed, 0.05);
            let t = seed as usize % 4;
            batch.dones.iter_mut().for_each(|d| *d = false);
            batch.chain = ppn_core::rollout::chain_lengths(&batch.dones, depth);
            force_clipped(&p, &mut batch, t, depth, scheme);
            let cfg = LossConfig {
                d_pi: depth,
                d_v: depth - 1,
                d_r: depth,
                alpha_h: 0.0,
                scheme,
                ..LossConfig::default()
            };
            let (_, g, b) = ppn_loss(&p, &batch, &[t], &cfg);
            assert_eq!((b.clip_frac_pi, b.clip_frac_v, b.clip_frac_r), (1.0, 1.0, 1.0), "{scheme} seed {seed}");
            assert!(flat(&g).iter().all(|&x| x == 0.0), "{scheme} seed {seed}: nonzero gradient");
        }
    }
}

#[test]
fn clipping_disabled_restores_gradient() {
    let (p0, mut batch) = synthetic_batch(1, "pointmass2d", 8, 12, ClipScheme::Grounded, 2);
    let p = perturbed(&p0, 1, 0.05);
    batch.dones.iter_mut().for_each(|d| *d = false);
    batch.chain = ppn_core::rollout::chain_lengths(&batch.dones, 2);
    force_clipped(&p, &mut batch, 0, 2, ClipScheme::Grounded);
    let cfg = LossConfig {
        d_v: 1,
        clip_policy: false,
        clip_value_reward: false,
        ..LossConfig::default()
    };
    let (_, g, _) = ppn_loss(&p, &batch, &[0], &cfg);
    assert!(flat(&g).iter().any(|&x| x != 0.0));
}

#[test]
fn schemes_coincide_at_depth_zero() {
    let depth0 = LossConfig {
        d_pi: 1,
        d_v: 0,
        d_r: 1,
        ..LossConfig::default()
    };
    for seed in 0..1000u64 {
        let env = if seed % 2 == 0 { "pointmass2d" } else { "pendulum" };
        let (p_old, batch) = synthetic_batch(seed, env, 8, 10, ClipScheme::Ungrounded, 2);
        let p = perturbed(&p_old, seed, 0.1);
        let idx: Vec<usize> = (0..batch.len()).collect();
        let g = grounded_clips(&batch, &idx, 0);
        let u = ungrounded_clips(&batch, &idx, 0).unwrap();
        for (a, b) in [(&g.logp, &u.logp), (&g.value, &u.value), (&g.reward, &u.reward)] {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12, "seed {seed}: {x} vs {y}");
            }
        }
        let lg = ppn_loss(&p, &batch, &idx, &depth0);
        let lu = ppn_loss(
            &p,
            &batch,
            &idx,
            &LossConfig {
                scheme: ClipScheme::Ungrounded,
                ..depth0
            },
        );
        assert!((lg.0 - lu.0).abs() <= 1e-12, "seed {seed}");
        assert!((lg.2.clip_frac_pi - lu.2.clip_frac_pi).abs() == 0.0);
        let worst = flat(&lg.1)
            .iter()
            .zip(flat(&lu.1))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-12, "seed {seed}: {worst:e}");
    }
}

#[test]
fn cached_depth_zero_reward_matches_direct_evaluation() {
    let (p, batch) = synthetic_batch(7, "pendulum", 8, 10, ClipScheme::Ungrounded, 2);
    for t in 0..batch.len() {
        let direct = predictions(&p, &batch, t, 1)[0];
        assert!((direct.1 - batch.v_old[t]).abs() <= 1e-12);
        assert!((direct.2 - batch.grounded.reward[t]).abs() <= 1e-12);
        assert!((direct.0 - batch.logp_old[t]).abs() <= 1e-12);
    }
}
