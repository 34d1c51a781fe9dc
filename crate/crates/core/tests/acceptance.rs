//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `PPN_ACCEPTANCE=1,3,12` restricts the run to the listed criteria.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use ppn_core::config::RunConfig;
use ppn_core::diffcore::{Tape, Tensor};
use ppn_core::envs::{self, riccati, LqrModel};
use ppn_core::exec::{mean_std, EvalConfig, ExecMode};
use ppn_core::model::{Dims, PPNParams};
use ppn_core::objective::{grounded_clips, total_loss, ungrounded_clips, LossConfig};
use ppn_core::par::Parallelism;
use ppn_core::rng::{stream, stream_n, Stream};
use ppn_core::rollout::{compute_gae, ClipScheme};
use ppn_core::trainer::{evaluate, Trainer};
use ppn_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng as _;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EVAL_EPISODES: usize = 20;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Final policy of one training run and its evaluation return (NaN when
/// training aborted on a non-finite value).
struct Run {
    params: Option<PPNParams>,
    eval: f64,
}

const PENDULUM_PRESET: &str = include_str!("../../../configs/pendulum.toml");
const LQR_PRESET: &str = include_str!("../../../configs/lqr2.toml");

/// Defaults, plus the shipped preset for pendulum.
fn desk_config(env: &str, seed: u64) -> RunConfig {
    let base = match env {
        "pendulum" => RunConfig::from_text(PENDULUM_PRESET).expect("preset parses"),
        _ => RunConfig::default(),
    };
    RunConfig {
        env: env.into(),
        seed,
        total_steps: 300_000,
        ..base
    }
    .with_depth(2)
}

fn train_eval(cfg: &RunConfig) -> Result<Run> {
    match Trainer::new(cfg.clone())?.run(None, |_| {}) {
        Ok(out) => {
            let sigma = cfg.sigma_schedule()?.sigma(u64::MAX);
            let ec = EvalConfig {
                mode: ExecMode::ModelFree,
                horizon: 1,
                episodes: EVAL_EPISODES,
                stochastic: true,
                seed: cfg.seed,
            };
            let eval = evaluate(&out.params, &cfg.env, &sigma, &ec, Parallelism::default())?.mean;
            Ok(Run {
                params: Some(out.params),
                eval,
            })
        }
        Err(Error::Diverged { .. }) => Ok(Run {
            params: None,
            eval: f64::NAN,
        }),
        Err(e) => Err(e),
    }
}

/// Training runs shared between criteria, trained on first use.
#[derive(Default)]
struct Runs {
    cache: BTreeMap<(String, u64), Run>,
}

impl Runs {
    fn get(&mut self, key: &str, seed: u64, cfg: impl FnOnce() -> RunConfig) -> Result<&Run> {
        let k = (key.to_string(), seed);
        if !self.cache.contains_key(&k) {
            let started = Instant::now();
            let run = train_eval(&cfg())?;
            eprintln!(
                "  trained {key} seed {seed}: eval return {:.3} ({:.0}s)",
                run.eval,
                started.elapsed().as_secs_f64()
            );
            self.cache.insert(k.clone(), run);
        }
        Ok(&self.cache[&k])
    }

    fn evals(&mut self, key: &str, cfg: impl Fn(u64) -> RunConfig) -> Result<Vec<f64>> {
        SEEDS.iter().map(|&s| Ok(self.get(key, s, || cfg(s))?.eval)).collect()
    }
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, _) = mean_std(x);
    let (my, _) = mean_std(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn c1_gradients(_: &mut Runs) -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    for depth in 1..=3 {
        let (p0, batch) = synthetic_batch(100 + depth as u64, "pointmass2d", 8, 6, ClipScheme::Ungrounded, depth);
        let p = perturbed(&p0, depth as u64, 0.05);
        for head in [Head::Encoder, Head::Transition, Head::Policy, Head::Value, Head::Reward] {
            worst = worst.max(grad_check_err(&p, |t, n| head_loss(t, n, &batch, head, depth)));
        }
        for scheme in [ClipScheme::Grounded, ClipScheme::Ungrounded] {
            let cfg = LossConfig {
                d_pi: depth,
                d_v: depth,
                d_r: depth,
                scheme,
                ..LossConfig::default()
            };
            let idx: Vec<usize> = (0..6).collect();
            worst = worst.max(grad_check_err(&p, |t, n| total_loss(t, n, &batch, &idx, &cfg).unwrap().0));
        }
    }
    Ok(verdict(
        worst < GRAD_TOL,
        format!("max relative error {worst:.2e} over 5 heads + full loss (both schemes), d = 1..3 (< 1e-3)"),
    ))
}

fn c2_gae(_: &mut Runs) -> Result<Verdict> {
    let mut r = stream(2024, Stream::Init);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = 20;
        let rewards: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| r.gen_bool(0.15)).collect();
        let boot = r.gen_range(-5.0..5.0);
        let gamma = r.gen_range(0.8..1.0);
        let lambda = r.gen_range(0.0..=1.0);
        let fast = compute_gae(&rewards, &values, &dones, boot, gamma, lambda);
        let slow = gae_brute_force(&rewards, &values, &dones, boot, gamma, lambda);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(verdict(worst <= 1e-10, format!("max |recursive − brute force| = {worst:.2e} over 1000 batches (≤ 1e-10)")))
}

fn c3_ppo2(_: &mut Runs) -> Result<Verdict> {
    let cfg = LossConfig::default().ppo2();
    let mut loss_err: f64 = 0.0;
    let mut grad_err: f64 = 0.0;
    for seed in 0..100u64 {
        let env = if seed % 2 == 0 { "pointmass2d" } else { "pendulum" };
        let (p0, batch) = synthetic_batch(seed, env, 32, 128, ClipScheme::Grounded, 1);
        let p = perturbed(&p0, seed, 0.05);
        let mut idx: Vec<usize> = (0..batch.len()).collect();
        idx.shuffle(&mut stream_n(seed, Stream::Shuffle, 0));
        idx.truncate(64);
        let (l, g, _) = ppn_loss(&p, &batch, &idx, &cfg);
        let (lo, go) = ppo2_loss(&p, &batch, &idx, &cfg);
        loss_err = loss_err.max((l - lo).abs());
        for (a, b) in flat(&g).iter().zip(flat(&go)) {
            grad_err = grad_err.max((a - b).abs());
        }
    }
    let run_cfg = RunConfig {
        total_steps: 50_000,
        ..RunConfig::default()
    }
    .ppo2();
    let a = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    let b = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    Trainer::new(run_cfg.clone())?.run(Some(a.path()), |_| {})?;
    let oracle = Ppo2Oracle::from(&run_cfg.loss());
    Trainer::with_objective(run_cfg, Box::new(oracle))?.run(Some(b.path()), |_| {})?;
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("metrics.csv")).map_err(|e| Error::io("metrics.csv", e));
    let same = read(&a)? == read(&b)?;
    Ok(verdict(
        loss_err <= 1e-10 && grad_err <= 1e-8 && same,
        format!(
            "100 batches: loss diff {loss_err:.2e} (≤ 1e-10), grad diff {grad_err:.2e} (≤ 1e-8); 50k-step metrics.csv {}",
            if same { "identical" } else { "DIFFERS" }
        ),
    ))
}

fn c4_inertness(_: &mut Runs) -> Result<Verdict> {
    let mut cases = 0;
    let mut bad = 0;
    for scheme in [ClipScheme::Grounded, ClipScheme::Ungrounded] {
        for seed in 0..30u64 {
            let depth = 1 + (seed as usize % 3);
            let (p0, mut batch) = synthetic_batch(seed, "pendulum", 16, 12, scheme, depth);
            let p = perturbed(&p0, seed + 50, 0.05);
            let t = seed as usize % 5;
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
            cases += 1;
            let all_clipped = (b.clip_frac_pi, b.clip_frac_v, b.clip_frac_r) == (1.0, 1.0, 1.0);
            if !all_clipped || flat(&g).iter().any(|&x| x != 0.0) {
                bad += 1;
            }
        }
    }
    Ok(verdict(bad == 0, format!("{} of {cases} fully clipped single-sample minibatches have exactly zero gradient", cases - bad)))
}

fn c5_depth_zero(_: &mut Runs) -> Result<Verdict> {
    let depth0 = LossConfig {
        d_pi: 1,
        d_v: 0,
        d_r: 1,
        ..LossConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..1000u64 {
        let env = if seed % 2 == 0 { "pointmass2d" } else { "pendulum" };
        let (p_old, batch) = synthetic_batch(seed, env, 16, 8, ClipScheme::Ungrounded, 2);
        let p = perturbed(&p_old, seed, 0.1);
        let idx: Vec<usize> = (0..batch.len()).collect();
        let g = grounded_clips(&batch, &idx, 0);
        let u = ungrounded_clips(&batch, &idx, 0)?;
        for (a, b) in [(&g.logp, &u.logp), (&g.value, &u.value), (&g.reward, &u.reward)] {
            for (x, y) in a.data().iter().zip(b.data()) {
                worst = worst.max((x - y).abs());
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
        worst = worst.max((lg.0 - lu.0).abs());
    }
    Ok(verdict(worst <= 1e-12, format!("max depth-0 discrepancy {worst:.2e} over 1000 parameter pairs (≤ 1e-12)")))
}

fn c6_unit_norm(_: &mut Runs) -> Result<Verdict> {
    let mut r = stream(6, Stream::Init);
    let mut worst: f64 = 0.0;
    let mut calls = 0;
    for round in 0..100 {
        let dims = Dims {
            obs: 3,
            act: 1 + round % 3,
            hidden: 32,
        };
        let mut p = PPNParams::init(dims, &mut r);
        let scale = [0.1, 1.0, 10.0][round % 3];
        for t in p.tensors_mut() {
            for x in t.data_mut() {
                *x *= scale;
            }
        }
        for _ in 0..1000 {
            let mag = 10f64.powf(r.gen_range(-3.0..3.0));
            let s: Vec<f64> = (0..dims.hidden).map(|_| mag * r.gen_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..dims.act).map(|_| r.gen_range(-3.0..3.0)).collect();
            let mut tape = Tape::new();
            let net = p.bind(&mut tape);
            let sv = tape.leaf(Tensor::row(&s));
            let av = tape.leaf(Tensor::row(&a));
            let next = net.transition(&mut tape, sv, av)?;
            let norm = tape.value(next).iter().map(|x| x * x).sum::<f64>().sqrt();
            worst = worst.max((norm - 1.0).abs());
            calls += 1;
        }
    }
    Ok(verdict(worst <= 1e-6, format!("max |‖ŝ'‖ − 1| = {worst:.2e} over {calls} transition calls (≤ 1e-6)")))
}

fn c7_learning(runs: &mut Runs) -> Result<Verdict> {
    let pend = runs.evals("pendulum", |s| desk_config("pendulum", s))?;
    let pm = runs.evals("pointmass2d", |s| desk_config("pointmass2d", s))?;
    let ok_p = pend.iter().filter(|&&x| x >= -200.0).count();
    let ok_m = pm.iter().filter(|&&x| x >= -15.0).count();
    Ok(verdict(
        ok_p >= 4 && ok_m >= 4,
        format!(
            "300k steps, d=2 grounded: pendulum {ok_p}/5 ≥ −200 {}; point-mass {ok_m}/5 ≥ −15 {} (need ≥ 4/5 each)",
            fmt_list(&pend),
            fmt_list(&pm)
        ),
    ))
}

fn c8_baseline(runs: &mut Runs) -> Result<Verdict> {
    let ppn = runs.evals("pointmass2d", |s| desk_config("pointmass2d", s))?;
    let ppo2 = runs.evals("pointmass2d-ppo2", |s| desk_config("pointmass2d", s).ppo2())?;
    let (m_ppn, _) = mean_std(&ppn);
    let (m_ppo, s_ppo) = mean_std(&ppo2);
    let bar = m_ppo - 0.5 * s_ppo;
    Ok(verdict(
        m_ppn >= bar,
        format!("point-mass PPN d=2 mean {m_ppn:.3} vs PPO2 reduction {m_ppo:.3} ± {s_ppo:.3} (need ≥ {bar:.3})"),
    ))
}

fn c9_clipping(runs: &mut Runs) -> Result<Verdict> {
    let grounded = runs.evals("pointmass2d", |s| desk_config("pointmass2d", s))?;
    let none = runs.evals("pointmass2d-noclip", |s| RunConfig {
        clip_policy: false,
        clip_value_reward: false,
        ..desk_config("pointmass2d", s)
    })?;
    let diverged = none.iter().filter(|x| x.is_nan()).count();
    let finite: Vec<f64> = none.iter().copied().filter(|x| x.is_finite()).collect();
    let (m_g, s_g) = mean_std(&grounded);
    let (m_n, s_n) = mean_std(&finite);
    let pooled = ((s_g * s_g + s_n * s_n) / 2.0).sqrt();
    let gap = m_g - m_n;
    let pass = diverged >= 2 || gap >= pooled;
    Ok(verdict(
        pass,
        format!(
            "grounded {m_g:.3} ± {s_g:.3}, no clipping {m_n:.3} ± {s_n:.3} ({diverged} diverged); gap {gap:.3} vs pooled std {pooled:.3}"
        ),
    ))
}

fn c10_transition(runs: &mut Runs) -> Result<Verdict> {
    let params = runs
        .get("pointmass2d", 0, || desk_config("pointmass2d", 0))?
        .params
        .clone()
        .ok_or_else(|| Error::Argument("reference run diverged".into()))?;
    let sigma = desk_config("pointmass2d", 0).sigma_schedule()?.sigma(u64::MAX);
    let mut per_mode = BTreeMap::new();
    for mode in ExecMode::ABLATION {
        let means: Vec<f64> = SEEDS
            .iter()
            .map(|&seed| {
                let ec = EvalConfig {
                    mode,
                    horizon: 2,
                    episodes: EVAL_EPISODES,
                    stochastic: true,
                    seed,
                };
                Ok(evaluate(&params, "pointmass2d", &sigma, &ec, Parallelism::default())?.mean)
            })
            .collect::<Result<_>>()?;
        per_mode.insert(mode.name(), means);
    }
    let mean = |m: &str| mean_std(&per_mode[m]).0;
    let (rep, traj, mpc) = (mean("repeat"), mean("trajectory"), mean("mpc"));
    let wins = per_mode["trajectory"]
        .iter()
        .zip(&per_mode["repeat"])
        .filter(|(t, r)| *t - *r >= 0.0)
        .count();
    Ok(verdict(
        rep <= traj && traj <= mpc && wins >= 4,
        format!("d=2 checkpoint: repeat {rep:.3} ≤ trajectory {traj:.3} ≤ mpc {mpc:.3}; trajectory ≥ repeat on {wins}/5 seeds"),
    ))
}

fn c11_lqr(_: &mut Runs) -> Result<Verdict> {
    let cfg = RunConfig {
        total_steps: 100_000,
        ..RunConfig::from_text(LQR_PRESET).expect("preset parses")
    };
    let out = Trainer::new(cfg.clone())?.run(None, |_| {})?;
    let sol = riccati(&LqrModel::default(), cfg.gamma, 1e-12, 1_000_000)?;
    let spec = envs::spec("lqr2")?;
    let mut r = stream(11, Stream::Eval);
    let mut critic = Vec::new();
    let mut oracle = Vec::new();
    for _ in 0..100 {
        let x = [r.gen_range(-1.0..=1.0), r.gen_range(-1.0..=1.0)];
        critic.push(out.params.act_heads(&x)?.2);
        oracle.push(sol.value(x));
    }
    debug_assert_eq!(spec.obs_dim, 2);
    let rho = pearson(&critic, &oracle);
    Ok(verdict(rho >= 0.9, format!("100k steps: Pearson r(critic, Riccati value) = {rho:.4} at 100 states (≥ 0.9)")))
}

fn c12_determinism(_: &mut Runs) -> Result<Verdict> {
    let cfg = RunConfig {
        total_steps: 20_480,
        seed: 12,
        ..RunConfig::default()
    };
    let mut files = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
        Trainer::new(cfg.clone())?.run(Some(dir.path()), |_| {})?;
        let path = dir.path().join("metrics.csv");
        files.push(fs::read(&path).map_err(|e| Error::io(path, e))?);
    }
    let same = files[0] == files[1];
    Ok(verdict(
        same,
        format!("two 20k-step runs, seed 12: metrics.csv {} ({} bytes)", if same { "byte-identical" } else { "DIFFER" }, files[0].len()),
    ))
}

type Check = fn(&mut Runs) -> Result<Verdict>;

fn main() -> ExitCode {
    let criteria: [(u32, &str, Check); 12] = [
        (1, "gradient correctness", c1_gradients),
        (2, "GAE oracle", c2_gae),
        (3, "PPO2 reduction", c3_ppo2),
        (4, "clipping inertness", c4_inertness),
        (5, "scheme agreement at depth 0", c5_depth_zero),
        (6, "unit-norm invariant", c6_unit_norm),
        (7, "desk-scale learning", c7_learning),
        (8, "baseline comparison", c8_baseline),
        (9, "clipping necessity", c9_clipping),
        (10, "transition ablation ordering", c10_transition),
        (11, "LQR critic sanity", c11_lqr),
        (12, "determinism", c12_determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("PPN_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut runs = Runs::default();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let v = check(&mut runs).unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        if !v.pass {
            failed += 1;
        }
        println!(
            "[{}] {id:>2} {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
